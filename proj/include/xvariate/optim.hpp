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

// AdamW with decoupled weight decay, global-norm clipping, and the
// warmup + cosine learning-rate schedule.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "xvariate/config.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/params.hpp"

namespace xvariate {

/// Number of warmup steps for a schedule (at least one).
inline std::size_t warmup_steps(const ScheduleConfig& s) {
  const auto w = static_cast<std::size_t>(
      std::llround(s.warmup_fraction * static_cast<double>(s.total_steps)));
  return std::max<std::size_t>(w, 1);
}

/// Learning rate for 1-based optimizer step `step`: linear warmup to the
/// peak, cosine decay to the final rate at `total_steps`, flat afterwards.
inline double lr_at_step(std::size_t step, const ScheduleConfig& s) {
  const std::size_t w = warmup_steps(s);
  if (step <= w) return s.peak_lr * static_cast<double>(step) / static_cast<double>(w);
  if (step >= s.total_steps) return s.final_lr;
  const double progress =
      static_cast<double>(step - w) / static_cast<double>(s.total_steps - w);
  return s.final_lr +
         0.5 * (s.peak_lr - s.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename Real>
double clip_grad_norm(const ParamStore<Real>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params.entries()) {
    for (Real g : e.var.grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real f = static_cast<Real>(max_norm / norm);
    for (const auto& e : params.entries()) {
      for (Real& g : e.var.grad_buffer().values()) g *= f;
    }
  }
  return norm;
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double eps = 1e-8;
};

template <typename Real = double>
class AdamW {
 public:
  AdamW(const ParamStore<Real>& params, AdamWOptions opt) : params_(params), opt_(opt) {
    for (const auto& e : params_.entries()) {
      m_.emplace_back(e.var.shape());
      v_.emplace_back(e.var.shape());
    }
  }

  /// theta <- theta * (1 - lr * wd), then the bias-corrected Adam update.
  /// Parameters without a gradient are treated as having a zero gradient.
  /// A non-finite gradient aborts before any parameter changes.
  void step(double lr, const std::set<std::string>& frozen = {}) {
    const auto& entries = params_.entries();
    for (const auto& e : entries) {
      if (!e.var.grad().all_finite()) {
        throw NumericError("non-finite gradient in parameter " + e.name);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (frozen.count(entries[i].name)) continue;
      Var<Real> var = entries[i].var;
      auto theta = var.mutable_value().values();
      const auto& grad = var.grad();
      auto m = m_[i].values();
      auto v = v_[i].values();
      const double decay = 1.0 - lr * opt_.weight_decay;
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const double g = grad.size() ? static_cast<double>(grad[k]) : 0.0;
        const double mk = opt_.beta1 * static_cast<double>(m[k]) + (1.0 - opt_.beta1) * g;
        const double vk = opt_.beta2 * static_cast<double>(v[k]) + (1.0 - opt_.beta2) * g * g;
        m[k] = static_cast<Real>(mk);
        v[k] = static_cast<Real>(vk);
        const double mhat = mk / bc1;
        const double vhat = vk / bc2;
        double th = static_cast<double>(theta[k]) * decay;
        th -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
        theta[k] = static_cast<Real>(th);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const std::vector<Tensor<Real>>& first_moments() const { return m_; }
  const std::vector<Tensor<Real>>& second_moments() const { return v_; }

 private:
  const ParamStore<Real>& params_;
  AdamWOptions opt_;
  std::size_t t_ = 0;
  std::vector<Tensor<Real>> m_;
  std::vector<Tensor<Real>> v_;
};

}  // namespace xvariate
