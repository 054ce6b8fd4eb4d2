#pragma once

#include <cstdint>
#include <random>

#include "natreg/real.hpp"

NATREG_NAMESPACE_BEGIN

/// Seeded engine behind all initialization, shuffling, dropout, and sampling.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Derives an independent stream for a named purpose from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

NATREG_NAMESPACE_END
