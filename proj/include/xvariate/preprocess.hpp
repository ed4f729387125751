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

// Raw windows -> normalized, masked, timestamped, patched model inputs, and
// the inverse map from normalized quantile outputs to physical scale.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xvariate/autodiff.hpp"
#include "xvariate/config.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/layout.hpp"
#include "xvariate/tensor.hpp"

namespace xvariate {

inline constexpr double kSigmaFloor = 1e-8;

template <typename Real = double>
struct InstanceStats {
  Real mu = 0;
  Real sigma = 1;
};

/// Compressive map applied to z-scores. asinh is total and invertible; the
/// arcsin mode clamps to [-1, 1] first.
template <typename Real>
Real compress(Real z, NormMode mode) {
  if (mode == NormMode::kAsinh) return std::asinh(z);
  return std::asin(std::clamp(z, Real(-1), Real(1)));
}

template <typename Real>
Real expand(Real y, NormMode mode) {
  if (mode == NormMode::kAsinh) return std::sinh(y);
  return std::sin(y);
}

/// Mean and population standard deviation over finite entries only.
/// Returns nullopt when nothing is observed.
template <typename Real>
std::optional<InstanceStats<Real>> observed_stats(std::span<const double> values) {
  std::size_t n = 0;
  Real mean = 0;
  for (double v : values) {
    if (std::isfinite(v)) {
      mean += static_cast<Real>(v);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  mean /= static_cast<Real>(n);
  Real var = 0;
  for (double v : values) {
    if (std::isfinite(v)) var += (static_cast<Real>(v) - mean) * (static_cast<Real>(v) - mean);
  }
  var /= static_cast<Real>(n);
  return InstanceStats<Real>{mean, std::max(std::sqrt(var), static_cast<Real>(kSigmaFloor))};
}

template <typename Real = double>
struct NormalizedSeries {
  std::vector<Real> values;  // NaN where the input was missing
  InstanceStats<Real> stats;
};

/// g((x - mu) / sigma) on observed entries. Stats come from the observed
/// entries unless supplied.
template <typename Real = double>
NormalizedSeries<Real> normalize_instance(std::span<const double> values,
                                          NormMode mode = NormMode::kAsinh,
                                          const InstanceStats<Real>* stats = nullptr,
                                          const std::string& where = "series") {
  NormalizedSeries<Real> out;
  if (stats) {
    out.stats = *stats;
  } else {
    auto s = observed_stats<Real>(values);
    if (!s) throw ValidationError(where + ": no observed values to normalize");
    out.stats = *s;
  }
  out.values.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isfinite(values[i])) {
      out.values[i] =
          compress((static_cast<Real>(values[i]) - out.stats.mu) / out.stats.sigma, mode);
    } else {
      out.values[i] = std::numeric_limits<Real>::quiet_NaN();
    }
  }
  return out;
}

template <typename Real>
Real denormalize_value(Real y, const InstanceStats<Real>& stats,
                       NormMode mode = NormMode::kAsinh) {
  return stats.sigma * expand(y, mode) + stats.mu;
}

/// sigma * g^-1(y) + mu, with one stats entry per leading row of y.
template <typename Real>
Tensor<Real> denormalize_forecast(const Tensor<Real>& y_norm,
                                  const std::vector<InstanceStats<Real>>& stats,
                                  NormMode mode = NormMode::kAsinh) {
  if (y_norm.rank() == 0 || y_norm.dim(0) != stats.size()) {
    throw ValidationError("denormalize_forecast: " + std::to_string(stats.size()) +
                          " stats for tensor " + shape_str(y_norm.shape()));
  }
  Tensor<Real> out = y_norm;
  const std::size_t per_row = stats.empty() ? 0 : y_norm.size() / stats.size();
  for (std::size_t r = 0; r < stats.size(); ++r) {
    for (std::size_t i = 0; i < per_row; ++i) {
      out[r * per_row + i] = denormalize_value(out[r * per_row + i], stats[r], mode);
    }
  }
  return out;
}

/// {-L/(L+T), ..., 0, ..., (T-1)/(L+T)}: zero at the first forecast step.
template <typename Real = double>
std::vector<Real> build_timestamps(std::size_t context, std::size_t horizon) {
  if (context + horizon == 0) throw ValidationError("build_timestamps: L + T must be positive");
  const Real denom = static_cast<Real>(context + horizon);
  std::vector<Real> ts(context + horizon);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    ts[k] = (static_cast<Real>(k) - static_cast<Real>(context)) / denom;
  }
  return ts;
}

/// One multivariate entity: `values[v][t]`, NaN where missing.
struct EntitySeries {
  std::string id;
  std::vector<std::vector<double>> values;
  std::string frequency = "H";

  std::size_t variates() const { return values.size(); }
  std::size_t length() const { return values.empty() ? 0 : values.front().size(); }
};

/// One entity's raw window: per-variate history (length L_i) and optional
/// future targets (length T_i, NaN where unknown). Missing entries are NaN.
struct SeriesWindow {
  std::string entity_id;
  std::vector<std::vector<double>> history;
  std::vector<std::vector<double>> future;
  std::size_t horizon = 0;  // T_i; future rows may be empty at inference

  std::size_t variates() const { return history.size(); }
  std::size_t context() const { return history.empty() ? 0 : history.front().size(); }
};

/// Normalized, padded, masked model input for a batch of entity windows.
/// All windows share a grid of `context` history positions (left-padded)
/// followed by `horizon` placeholder positions.
template <typename Real = double>
struct PreparedBatch {
  std::size_t context = 0;  // L_max
  std::size_t horizon = 0;  // T_max
  std::size_t patch_len = 0;
  NormMode norm_mode = NormMode::kAsinh;

  Tensor<Real> values;        // [M, L+T]; 0 at masked/future positions
  Tensor<Real> timestamps;    // [M, L+T]
  Tensor<Real> obs_mask;      // [M, L+T]; 1 = genuine observation
  Tensor<Real> target;        // [M, T]; normalized, 0 where invalid
  Tensor<Real> target_valid;  // [M, T]
  std::vector<InstanceStats<Real>> stats;  // per row
  EntityLayout layout;

  std::size_t rows() const { return layout.rows(); }
  std::size_t patches() const { return (context + horizon) / patch_len; }
  std::size_t horizon_patches() const { return horizon / patch_len; }

  template <typename Other>
  PreparedBatch<Other> cast() const {
    PreparedBatch<Other> out;
    out.context = context;
    out.horizon = horizon;
    out.patch_len = patch_len;
    out.norm_mode = norm_mode;
    out.values = values.template cast<Other>();
    out.timestamps = timestamps.template cast<Other>();
    out.obs_mask = obs_mask.template cast<Other>();
    out.target = target.template cast<Other>();
    out.target_valid = target_valid.template cast<Other>();
    for (const auto& s : stats) {
      out.stats.push_back({static_cast<Other>(s.mu), static_cast<Other>(s.sigma)});
    }
    out.layout = layout;
    return out;
  }
};

/// Pads every window to `context` history steps on the left and `horizon`
/// future steps on the right. A variate with no observed history becomes a
/// padded row. Timestamps use each window's own (L_i, T_i) so that extra
/// padding never changes the real positions.
template <typename Real = double>
PreparedBatch<Real> prepare_batch(std::span<const SeriesWindow> windows, std::size_t context,
                                  std::size_t horizon, std::size_t patch_len,
                                  NormMode mode = NormMode::kAsinh) {
  if (windows.empty()) throw ValidationError("prepare_batch: no windows");
  if (patch_len == 0 || horizon == 0 || (context + horizon) % patch_len != 0 ||
      horizon % patch_len != 0) {
    throw ValidationError("prepare_batch: L+T=" + std::to_string(context + horizon) +
                          " and T=" + std::to_string(horizon) +
                          " must be multiples of patch length " + std::to_string(patch_len));
  }
  std::size_t rows = 0;
  for (const auto& w : windows) {
    if (w.variates() == 0) throw ValidationError(w.entity_id + ": window has no variates");
    if (w.context() > context) {
      throw ValidationError(w.entity_id + ": context " + std::to_string(w.context()) +
                            " exceeds batch context " + std::to_string(context));
    }
    if (w.horizon == 0 || w.horizon > horizon) {
      throw ValidationError(w.entity_id + ": horizon " + std::to_string(w.horizon) +
                            " outside [1, " + std::to_string(horizon) + "]");
    }
    rows += w.variates();
  }
  const std::size_t width = context + horizon;
  PreparedBatch<Real> b;
  b.context = context;
  b.horizon = horizon;
  b.patch_len = patch_len;
  b.norm_mode = mode;
  b.values = Tensor<Real>(Shape{rows, width});
  b.timestamps = Tensor<Real>(Shape{rows, width});
  b.obs_mask = Tensor<Real>(Shape{rows, width});
  b.target = Tensor<Real>(Shape{rows, horizon});
  b.target_valid = Tensor<Real>(Shape{rows, horizon});
  b.stats.assign(rows, InstanceStats<Real>{});
  b.layout.padded.assign(rows, false);

  std::size_t row = 0;
  for (const auto& w : windows) {
    const std::size_t li = w.context();
    const std::size_t ti = w.horizon;
    const std::size_t pad = context - li;
    b.layout.entities.push_back({row, w.variates(), pad / patch_len});
    const Real denom = static_cast<Real>(li + ti);
    for (std::size_t v = 0; v < w.variates(); ++v, ++row) {
      if (w.history[v].size() != li) {
        throw ValidationError(w.entity_id + ": ragged history rows");
      }
      for (std::size_t k = 0; k < width; ++k) {
        b.timestamps[row * width + k] =
            (static_cast<Real>(k) - static_cast<Real>(context)) / denom;
      }
      auto stats = observed_stats<Real>(w.history[v]);
      if (!stats) {
        b.layout.padded[row] = true;
        continue;
      }
      b.stats[row] = *stats;
      const auto norm = normalize_instance<Real>(w.history[v], mode, &*stats);
      for (std::size_t k = 0; k < li; ++k) {
        if (std::isfinite(static_cast<double>(norm.values[k]))) {
          b.values[row * width + pad + k] = norm.values[k];
          b.obs_mask[row * width + pad + k] = Real(1);
        }
      }
      if (v < w.future.size()) {
        const auto& fut = w.future[v];
        for (std::size_t t = 0; t < std::min(ti, fut.size()); ++t) {
          if (std::isfinite(fut[t])) {
            b.target[row * horizon + t] =
                compress((static_cast<Real>(fut[t]) - stats->mu) / stats->sigma, mode);
            b.target_valid[row * horizon + t] = Real(1);
          }
        }
      }
    }
  }
  b.layout.validate(rows);
  return b;
}

/// Single-entity input with exactly L history and T placeholder steps.
template <typename Real = double>
PreparedBatch<Real> build_model_input(const SeriesWindow& window, std::size_t context,
                                      std::size_t horizon, std::size_t patch_len,
                                      NormMode mode = NormMode::kAsinh) {
  return prepare_batch<Real>(std::span<const SeriesWindow>(&window, 1), context, horizon,
                             patch_len, mode);
}

/// [M, P, 3*L_p]: per time step the (value, timestamp, mask) triple,
/// concatenated step-major within each patch.
template <typename Real>
Tensor<Real> patch_features(const PreparedBatch<Real>& b) {
  const std::size_t rows = b.rows();
  const std::size_t width = b.context + b.horizon;
  const std::size_t p_count = b.patches();
  const std::size_t lp = b.patch_len;
  Tensor<Real> out(Shape{rows, p_count, 3 * lp});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = 0; p < p_count; ++p) {
      Real* dst = out.data() + (r * p_count + p) * 3 * lp;
      for (std::size_t s = 0; s < lp; ++s) {
        const std::size_t k = r * width + p * lp + s;
        dst[3 * s + 0] = b.values[k];
        dst[3 * s + 1] = b.timestamps[k];
        dst[3 * s + 2] = b.obs_mask[k];
      }
    }
  }
  return out;
}

template <typename Real>
struct PatchEmbedParams {
  Var<Real> linear_w;  // [D, 3Lp]
  Var<Real> linear_b;  // [D]
  Var<Real> fc1_w;     // [D, 3Lp]
  Var<Real> fc1_b;
  Var<Real> fc2_w;     // [D, D]
  Var<Real> fc2_b;
};

/// Linear branch plus a one-hidden-layer GELU branch, summed.
template <typename Real>
Var<Real> res_patch_embed(const Var<Real>& patches, const PatchEmbedParams<Real>& p) {
  Var<Real> lin = linear(patches, p.linear_w, &p.linear_b);
  Var<Real> hidden = gelu(linear(patches, p.fc1_w, &p.fc1_b));
  return add(lin, linear(hidden, p.fc2_w, &p.fc2_b));
}

}  // namespace xvariate
