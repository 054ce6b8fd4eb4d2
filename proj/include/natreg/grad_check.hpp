#pragma once

#include <functional>
#include <span>

#include "natreg/tensor.hpp"

NATREG_NAMESPACE_BEGIN

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t elements = 0;
  /// Elements whose ±step probes fell on different sides of a relu kink and
  /// were re-measured with a smaller step.
  std::size_t kink_elements = 0;
  /// Tensor index and element index of the worst element.
  std::size_t worst_tensor = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

/// Largest |analytic − central difference| / max(|analytic|, |numeric|, 1e-8)
/// over the elements of x. f must return a scalar tensor. When the two probes
/// of an element see different relu sign patterns, the difference quotient
/// spans a kink; the step for that element is divided by 10 (up to three
/// times) until both probes agree.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step);

/// Same check over several inputs that f reads through captured handles.
GradCheckReport grad_check_many(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                                double step);

NATREG_NAMESPACE_END
