#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "natreg/tensor.hpp"

NATREG_NAMESPACE_BEGIN

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered archive of uniquely named tensors for one model.
///
/// The same storage may appear under names in two archives (the backward
/// reconstructor shares the NAT source-embedding table); unique_tensors()
/// collapses such aliases so an optimizer updates each storage once.
class ModelParams {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }

  /// Entries of this archive followed by other's, other's names prefixed.
  ModelParams merged(const ModelParams& other, std::string_view prefix_self,
                     std::string_view prefix_other) const;
  std::vector<Tensor> unique_tensors() const;
  std::size_t parameter_count() const;
  void zero_grad();
  /// Deep copy: no storage is shared with this archive (aliases inside the
  /// archive stay aliased in the copy).
  ModelParams clone() const;
  /// Copies values from other by name; shapes must agree.
  void assign_values(const ModelParams& other);

 private:
  std::vector<NamedTensor> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

NATREG_NAMESPACE_END
