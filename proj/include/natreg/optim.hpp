#pragma once

#include <vector>

#include "natreg/tensor.hpp"

NATREG_NAMESPACE_BEGIN

/// base_lr · min(step^−0.5, step · warmup^−1.5) · d_model^−0.5, step ≥ 1.
double learning_rate(std::size_t step, double base_lr, std::size_t warmup_steps, std::size_t d_model);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

/// Adam with bias correction over a fixed list of parameter tensors.
/// Tensors without a gradient buffer are skipped for that step.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamSettings settings);

  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const noexcept { return t_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamSettings s_;
  std::vector<std::vector<real>> m_, v_;
  std::size_t t_ = 0;
};

NATREG_NAMESPACE_END
