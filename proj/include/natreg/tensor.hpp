#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "natreg/real.hpp"

NATREG_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until the first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major array participating in reverse-mode differentiation.
///
/// Tensor is a handle: copies share storage. Two handles referring to the
/// same storage compare equal under same_storage(), which is how shared
/// embedding tables are expressed.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  /// Rows of a matrix view: product of all leading dimensions.
  std::size_t rows() const;
  /// Width of the last axis.
  std::size_t cols() const;

  std::span<real> data() { return impl_->data; }
  std::span<const real> data() const { return impl_->data; }
  real item() const;
  real at(std::size_t row, std::size_t col) const { return impl_->data[row * cols() + col]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient state is not part of a tensor's value, so these are const on
  // the handle.

  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<real> grad() const;
  std::span<const real> grad_view() const { return impl_->grad; }
  void zero_grad() const;
  /// Adds g elementwise into the gradient buffer.
  void accumulate_grad(std::span<const real> g) const;

  /// Deep copy of the values with no gradient history.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Operations append a backward closure when a tape is active on the current
/// thread (see TapeScope) and at least one input requires a gradient.
/// backward() replays the closures in exact reverse recording order.
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(Backward fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() noexcept { entries_.clear(); }

  /// Seeds d(root)/d(root) = 1 and replays the tape. root must be a scalar.
  void backward(Tensor root);

  /// Visit hook used by tests to observe replay order; called with the entry
  /// index immediately before that entry's closure runs.
  void set_replay_observer(std::function<void(std::size_t)> observer) {
    observer_ = std::move(observer);
  }

 private:
  std::vector<Backward> entries_;
  std::function<void(std::size_t)> observer_;
};

/// Installs a tape as the thread's active recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording on the current thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

NATREG_NAMESPACE_END
