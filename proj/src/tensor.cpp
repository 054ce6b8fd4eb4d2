#include "natreg/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), real(0));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<real> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  const auto& s = impl_->shape;
  if (s.empty()) return 1;
  return impl_->data.size() / s.back();
}

std::size_t Tensor::cols() const {
  const auto& s = impl_->shape;
  return s.empty() ? 1 : s.back();
}

real Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->data[0];
}

std::span<real> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), real(0));
  return impl_->grad;
}

void Tensor::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
}

void Tensor::accumulate_grad(std::span<const real> g) const {
  auto dst = grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

Tensor Tensor::clone() const {
  return from(impl_->shape, impl_->data, false);
}

void Tape::backward(Tensor root) {
  if (root.numel() != 1) {
    throw ContractError("backward() needs a scalar root, got " + shape_string(root.shape()));
  }
  root.grad()[0] += real(1);
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (observer_) observer_(i);
    entries_[i]();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

NATREG_NAMESPACE_END
