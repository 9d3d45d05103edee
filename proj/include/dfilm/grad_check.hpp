// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "dfilm/param_store.hpp"

namespace dfilm {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the gradients already stored in `params` against central
/// differences of `f`:
///
///   numeric = (f(theta + eps) - f(theta - eps)) / (2 eps)
///   rel     = |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
///
/// Every coordinate of every entry is perturbed and restored; the store's
/// values are unchanged on return. Throws NumericError if f is non-finite.
GradCheckResult grad_check(const std::function<double(const ParamStore&)>& f,
                           ParamStore& params, double eps = 1e-5);

}  // namespace dfilm
