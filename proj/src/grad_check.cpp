#include "advtrain/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advtrain {

GradCheckReport grad_check(const std::function<double()>& loss,
                           std::span<Tensor* const> params,
                           std::span<const Tensor* const> analytic, double eps) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("grad_check: params/analytic count mismatch");

  GradCheckReport rep;
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    const Tensor& a = *analytic[p];
    if (!t.same_shape(a))
      throw std::invalid_argument("grad_check: gradient shape mismatch at parameter " +
                                  std::to_string(p));
    for (size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = loss();
      t[i] = saved - eps;
      const double down = loss();
      t[i] = saved;

      const double num = (up - down) / (2.0 * eps);
      const double abs_err = std::abs(num - a[i]);
      const double denom = std::max({std::abs(num), std::abs(a[i]), 0.01});
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
      ++rep.count;
    }
  }
  return rep;
}

}  // namespace advtrain
