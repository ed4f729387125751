/*
 * Copyright (c) 2026 The xvariate Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Central-difference gradient verification.
//
// The analytic side runs the production graph and backward pass. The numeric
// side evaluates (f(θ+h) - f(θ-h)) / 2h per scalar. It may run in a wider
// scalar type than the analytic side so that roundoff in f does not swamp
// small gradient entries.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "xvariate/autodiff.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/params.hpp"

namespace xvariate {

struct ParamCheck {
  std::string name;
  std::size_t count = 0;
  bool skipped = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<ParamCheck> params;

  bool passed(double tol) const { return max_rel_error < tol; }
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// f_analytic() builds the loss graph from `params`; f_numeric() evaluates
/// the same function reading `params_numeric`, which must hold the same
/// names and values. Names in `skip` are reported but not probed.
template <typename Real, typename Hi, typename F, typename FHi>
GradCheckReport grad_check_mixed(F&& f_analytic, const ParamStore<Real>& params,
                                 FHi&& f_numeric, const ParamStore<Hi>& params_numeric,
                                 double step = 1e-5,
                                 const std::set<std::string>& skip = {}) {
  params.zero_grad();
  Var<Real> loss = f_analytic();
  backward(loss);

  GradCheckReport report;
  for (const auto& entry : params.entries()) {
    ParamCheck check;
    check.name = entry.name;
    check.count = entry.var.size();
    if (skip.count(entry.name)) {
      check.skipped = true;
      report.params.push_back(check);
      continue;
    }
    const Tensor<Real>& grad = entry.var.grad();
    Var<Hi> probe = params_numeric.get(entry.name);
    Tensor<Hi>& theta = probe.mutable_value();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const Hi saved = theta[i];
      Hi f_plus;
      Hi f_minus;
      {
        NoGradGuard no_grad;
        theta[i] = saved + static_cast<Hi>(step);
        f_plus = static_cast<Hi>(f_numeric());
        theta[i] = saved - static_cast<Hi>(step);
        f_minus = static_cast<Hi>(f_numeric());
        theta[i] = saved;
      }
      if (!std::isfinite(static_cast<double>(f_plus)) ||
          !std::isfinite(static_cast<double>(f_minus))) {
        throw NumericError("grad_check: non-finite loss probing " + entry.name + "[" +
                           std::to_string(i) + "]");
      }
      const double numeric =
          static_cast<double>((f_plus - f_minus) / (Hi(2) * static_cast<Hi>(step)));
      const double analytic = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double err = relative_error(analytic, numeric);
      if (i == 0 || err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = analytic;
        check.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(check);
  }
  return report;
}

/// Same-precision check: f() builds a scalar loss graph from `params`.
template <typename Real, typename F>
GradCheckReport grad_check(F&& f, const ParamStore<Real>& params, double step = 1e-5,
                           const std::set<std::string>& skip = {}) {
  return grad_check_mixed(
      f, params, [&f]() { return f().item(); }, params, step, skip);
}

}  // namespace xvariate
