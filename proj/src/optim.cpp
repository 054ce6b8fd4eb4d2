#include "natreg/optim.hpp"

#include <algorithm>
#include <cmath>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

double learning_rate(std::size_t step, double base_lr, std::size_t warmup_steps, std::size_t d_model) {
  if (step == 0) throw ContractError("learning_rate: steps are counted from 1");
  if (warmup_steps == 0 || d_model == 0) throw ConfigError("warmup_steps and d_model must be positive");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return base_lr * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5)) *
         std::pow(static_cast<double>(d_model), -0.5);
}

Adam::Adam(std::vector<Tensor> params, AdamSettings settings)
    : params_(std::move(params)), s_(settings) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), real(0));
    v_.emplace_back(p.numel(), real(0));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1 - std::pow(s_.beta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(s_.beta2, static_cast<double>(t_));
  const real b1 = static_cast<real>(s_.beta1), b2 = static_cast<real>(s_.beta2);
  const real step_size = static_cast<real>(lr / c1);
  const real inv_c2 = static_cast<real>(1 / c2);
  const real eps = static_cast<real>(s_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad_view();
    auto w = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

NATREG_NAMESPACE_END
