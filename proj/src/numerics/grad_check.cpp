// SPDX-License-Identifier: Apache-2.0
#include "dfilm/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace dfilm {

GradCheckResult grad_check(const std::function<double(const ParamStore&)>& f,
                           ParamStore& params, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  auto eval = [&]() {
    const double v = f(params);
    if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
    return v;
  };

  GradCheckResult result;
  for (auto& entry : params.entries()) {
    Tensor& value = entry.value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double plus = eval();
      value[i] = saved - eps;
      const double minus = eval();
      value[i] = saved;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double analytic = entry.grad[i];
      const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.coordinates;
      if (result.worst_param.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = entry.name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace dfilm
