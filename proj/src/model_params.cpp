#include "natreg/model_params.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

void ModelParams::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw FormatError("duplicate tensor name '" + name + "'");
  for (real v : tensor.data()) {
    if (!std::isfinite(v)) throw FormatError("tensor '" + name + "' holds a non-finite value");
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor)});
}

bool ModelParams::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

const Tensor& ModelParams::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw FormatError("missing tensor '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

ModelParams ModelParams::merged(const ModelParams& other, std::string_view prefix_self,
                                std::string_view prefix_other) const {
  ModelParams out;
  for (const auto& e : entries_) out.add(std::string(prefix_self) + e.name, e.tensor);
  for (const auto& e : other.entries_) out.add(std::string(prefix_other) + e.name, e.tensor);
  return out;
}

std::vector<Tensor> ModelParams::unique_tensors() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    const bool seen = std::any_of(out.begin(), out.end(),
                                  [&](const Tensor& t) { return t.same_storage(e.tensor); });
    if (!seen) out.push_back(e.tensor);
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : unique_tensors()) n += t.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  std::map<const void*, Tensor> copies;
  for (const auto& e : entries_) {
    const void* key = e.tensor.impl().get();
    auto it = copies.find(key);
    if (it == copies.end()) {
      Tensor c = e.tensor.clone();
      c.set_requires_grad(e.tensor.requires_grad());
      it = copies.emplace(key, c).first;
    }
    out.add(e.name, it->second);
  }
  return out;
}

void ModelParams::assign_values(const ModelParams& other) {
  for (auto& e : entries_) {
    const Tensor& src = other.get(e.name);
    if (src.shape() != e.tensor.shape()) {
      throw DimensionError("assign_values: '" + e.name + "' has shape " +
                           shape_string(e.tensor.shape()) + " but source has " +
                           shape_string(src.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), e.tensor.data().begin());
  }
}

NATREG_NAMESPACE_END
