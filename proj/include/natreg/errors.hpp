#pragma once

#include <stdexcept>
#include <string>

#include "natreg/real.hpp"

NATREG_NAMESPACE_BEGIN

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Zero-length sequence where at least one element is required.
class EmptySequenceError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than the positional table or another configured bound.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint, corpus, or vocabulary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

NATREG_NAMESPACE_END
