#pragma once

#include <functional>
#include <span>

#include "advtrain/tensor.hpp"

namespace advtrain {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  size_t count = 0;
};

/// Central finite differences at 64-bit. `loss` re-evaluates with the current
/// contents of `params`; entries are perturbed in place and restored.
/// Relative error uses max(|analytic|, |numeric|, 0.01) as denominator so
/// near-zero gradients are judged on absolute error.
GradCheckReport grad_check(const std::function<double()>& loss,
                           std::span<Tensor* const> params,
                           std::span<const Tensor* const> analytic, double eps = 1e-5);

}  // namespace advtrain
