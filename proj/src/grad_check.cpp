#include "natreg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "natreg/errors.hpp"
#include "natreg/ops.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

double evaluate(const std::function<Tensor()>& f, std::vector<bool>& pattern) {
  pattern.clear();
  NoGradScope no_grad;
  ReluPatternScope record(pattern);
  Tensor y = f();
  if (y.numel() != 1) {
    throw ContractError("grad_check: function output has shape " + shape_string(y.shape()));
  }
  return static_cast<double>(y.item());
}

}  // namespace

GradCheckReport grad_check_many(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                                double step) {
  if (step <= 0) throw ContractError("grad_check: step must be positive");
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  std::vector<std::vector<real>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    if (y.numel() != 1) {
      throw ContractError("grad_check: function output has shape " + shape_string(y.shape()));
    }
    tape.backward(y);
  }
  for (auto& x : inputs) {
    const auto g = x.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckReport report;
  std::vector<bool> pattern_plus, pattern_minus;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto data = inputs[t].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const real saved = data[i];
      double h = step;
      double numeric = 0;
      for (int attempt = 0; attempt < 4; ++attempt, h /= 10) {
        data[i] = static_cast<real>(saved + h);
        const double plus = evaluate(f, pattern_plus);
        data[i] = static_cast<real>(saved - h);
        const double minus = evaluate(f, pattern_minus);
        data[i] = saved;
        numeric = (plus - minus) / (2 * h);
        if (pattern_plus == pattern_minus) break;
        if (attempt == 0) ++report.kink_elements;
      }
      const double a = static_cast<double>(analytic[t][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.elements;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = t;
        report.worst_element = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  Tensor inputs[] = {x};
  return grad_check_many([&] { return f(x); }, inputs, step).max_rel_error;
}

NATREG_NAMESPACE_END
