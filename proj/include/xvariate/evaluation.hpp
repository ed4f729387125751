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

// Forecast metrics (MASE, quantile CRPS), the seasonal-naive baseline,
// geometric-mean aggregation, and rolling-window evaluation in multivariate
// and channel-independent inference modes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xvariate/errors.hpp"
#include "xvariate/forecast_head.hpp"
#include "xvariate/model.hpp"
#include "xvariate/preprocess.hpp"

namespace xvariate {

/// In-sample seasonal-naive scale: mean |y_t - y_{t-m}| over observed pairs.
inline double seasonal_scale(std::span<const double> insample, std::size_t m) {
  if (m == 0) throw ValidationError("seasonality must be >= 1");
  if (insample.size() <= m) {
    throw ValidationError("in-sample length " + std::to_string(insample.size()) +
                          " must exceed seasonality " + std::to_string(m));
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = m; t < insample.size(); ++t) {
    if (std::isfinite(insample[t]) && std::isfinite(insample[t - m])) {
      sum += std::abs(insample[t] - insample[t - m]);
      ++n;
    }
  }
  if (n == 0 || sum == 0.0) throw ValidationError("constant in-sample history: MASE undefined");
  return sum / static_cast<double>(n);
}

inline double mase(std::span<const double> forecast, std::span<const double> actual,
                   std::span<const double> insample, std::size_t m) {
  if (forecast.size() != actual.size() || actual.empty()) {
    throw ValidationError("mase: forecast and actual lengths differ");
  }
  const double scale = seasonal_scale(insample, m);
  double err = 0.0;
  for (std::size_t t = 0; t < actual.size(); ++t) err += std::abs(actual[t] - forecast[t]);
  return err / static_cast<double>(actual.size()) / scale;
}

struct CrpsResult {
  double value = 0.0;
  bool normalized = true;  // false when all actuals are zero
};

/// 2 * mean pinball over (t, q), divided by mean |y|. `pred` is [T x |Q|]
/// row-major with sorted quantile columns.
inline CrpsResult crps_quantile(std::span<const double> pred, std::span<const double> actual,
                                std::span<const double> quantiles) {
  const std::size_t nq = quantiles.size();
  if (nq == 0 || pred.size() != actual.size() * nq || actual.empty()) {
    throw ValidationError("crps_quantile: prediction must be [T x |Q|]");
  }
  double loss = 0.0;
  double scale = 0.0;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    for (std::size_t k = 0; k < nq; ++k) {
      const double e = actual[t] - pred[t * nq + k];
      loss += std::max(quantiles[k] * e, (quantiles[k] - 1.0) * e);
    }
    scale += std::abs(actual[t]);
  }
  const double mean_loss = 2.0 * loss / static_cast<double>(actual.size() * nq);
  if (scale == 0.0) return {mean_loss, false};
  return {mean_loss / (scale / static_cast<double>(actual.size())), true};
}

/// Repeats the last m observations of the history across the horizon.
inline std::vector<double> seasonal_naive(std::span<const double> history, std::size_t horizon,
                                         std::size_t m) {
  if (m == 0 || history.size() < m) throw ValidationError("seasonal_naive: history shorter than m");
  std::vector<double> out(horizon);
  const std::size_t base = history.size() - m;
  for (std::size_t t = 0; t < horizon; ++t) out[t] = history[base + t % m];
  return out;
}

struct GeomeanResult {
  double value = 0.0;
  std::size_t used = 0;
  std::vector<std::size_t> excluded;  // indices of non-positive or non-finite ratios
};

inline GeomeanResult aggregate_geomean(std::span<const double> ratios) {
  GeomeanResult r;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!(ratios[i] > 0.0) || !std::isfinite(ratios[i])) {
      r.excluded.push_back(i);
      continue;
    }
    log_sum += std::log(ratios[i]);
    ++r.used;
  }
  r.value = r.used ? std::exp(log_sum / static_cast<double>(r.used))
                   : std::numeric_limits<double>::quiet_NaN();
  return r;
}

/// Median track of a sorted [T x |Q|] block, interpolating between the
/// neighbouring levels when 0.5 is not in the set.
inline std::vector<double> median_track(std::span<const double> pred,
                                        std::span<const double> quantiles) {
  const std::size_t nq = quantiles.size();
  const std::size_t horizon = pred.size() / nq;
  std::size_t hi = 0;
  while (hi < nq && quantiles[hi] < 0.5) ++hi;
  std::vector<double> out(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const double* row = pred.data() + t * nq;
    if (hi == nq) {
      out[t] = row[nq - 1];
    } else if (quantiles[hi] == 0.5 || hi == 0) {
      out[t] = row[hi];
    } else {
      const double w = (0.5 - quantiles[hi - 1]) / (quantiles[hi] - quantiles[hi - 1]);
      out[t] = row[hi - 1] + w * (row[hi] - row[hi - 1]);
    }
  }
  return out;
}

enum class InferenceMode { kMultivariate, kChannelIndependent };

inline std::string mode_name(InferenceMode m) {
  return m == InferenceMode::kMultivariate ? "multivariate" : "independent";
}

struct EvalConfig {
  std::size_t horizon = 16;       // H
  std::size_t windows = 1;        // W
  std::size_t seasonality = 1;    // m
  std::size_t max_context = 512;  // history fed to the model per window
  double test_fraction = 0.1;
};

inline void validate(const EvalConfig& c) {
  if (c.horizon == 0 || c.windows == 0 || c.seasonality == 0 || c.max_context == 0) {
    throw ValidationError("eval: H, W, m and max_context must be >= 1");
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
    throw ValidationError("eval: test_fraction must be in (0, 1)");
  }
}

struct EvalRow {
  std::string dataset;
  std::string entity;
  InferenceMode mode = InferenceMode::kMultivariate;
  std::size_t horizon = 0;
  std::size_t windows = 0;
  double mase = 0.0;
  double crps = 0.0;
  double naive_mase = 0.0;
  double naive_crps = 0.0;
  bool crps_normalized = true;

  double mase_ratio() const { return mase / naive_mase; }
  double crps_ratio() const { return crps / naive_crps; }
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> skipped;  // "entity: reason"
};

/// First index of the test split for a series of length n.
inline std::size_t test_start(std::size_t n, double fraction) {
  const auto test = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  return n - std::min(test, n);
}

/// Scores one entity over W non-overlapping H-step windows ending at the
/// series end. Each window is forecast from the history before it (capped at
/// max_context); MASE and CRPS are averaged over variates and windows, with
/// the in-sample scale taken from the full history before each window.
/// Channel-independent mode forecasts every variate as its own entity; in
/// both modes an entity never shares a forward pass with another entity.
template <typename Real>
std::optional<EvalRow> evaluate_entity(const Model<Real>& model, const EntitySeries& series,
                                       const EvalConfig& cfg, InferenceMode mode,
                                       std::string* skip_reason = nullptr) {
  validate(cfg);
  auto skip = [&](const std::string& why) {
    if (skip_reason) *skip_reason = series.id + ": " + why;
    return std::nullopt;
  };
  const std::size_t n = series.length();
  const std::size_t span_len = cfg.horizon * cfg.windows;
  if (span_len > n - test_start(n, cfg.test_fraction)) {
    return skip("test split of " + std::to_string(n - test_start(n, cfg.test_fraction)) +
                " steps cannot hold " + std::to_string(cfg.windows) + " windows of " +
                std::to_string(cfg.horizon));
  }
  const auto& quantiles = model.config().quantiles;
  const std::size_t nq = quantiles.size();
  EvalRow row;
  row.entity = series.id;
  row.mode = mode;
  row.horizon = cfg.horizon;
  row.windows = cfg.windows;
  std::size_t scored = 0;
  for (std::size_t w = 0; w < cfg.windows; ++w) {
    const std::size_t origin = n - span_len + w * cfg.horizon;
    const std::size_t ctx_begin = origin > cfg.max_context ? origin - cfg.max_context : 0;
    auto window_of = [&](std::size_t v) {
      const auto& y = series.values[v];
      return std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(ctx_begin),
                                 y.begin() + static_cast<std::ptrdiff_t>(origin));
    };
    std::vector<SeriesWindow> inputs;
    if (mode == InferenceMode::kMultivariate) {
      SeriesWindow sw;
      sw.entity_id = series.id;
      for (std::size_t v = 0; v < series.variates(); ++v) sw.history.push_back(window_of(v));
      inputs.push_back(std::move(sw));
    } else {
      for (std::size_t v = 0; v < series.variates(); ++v) {
        SeriesWindow sw;
        sw.entity_id = series.id;
        sw.history.push_back(window_of(v));
        inputs.push_back(std::move(sw));
      }
    }
    // One forward pass per entity (or per variate in independent mode).
    std::vector<double> preds;  // [variate][H][Q]
    for (const auto& in : inputs) {
      const auto fc = forecast_windows(model, std::span<const SeriesWindow>(&in, 1), cfg.horizon);
      preds.insert(preds.end(), fc.values.values().begin(), fc.values.values().end());
    }
    for (std::size_t v = 0; v < series.variates(); ++v) {
      const auto& y = series.values[v];
      std::span<const double> insample(y.data(), origin);
      std::span<const double> actual(y.data() + origin, cfg.horizon);
      bool complete = true;
      for (double a : actual) complete = complete && std::isfinite(a);
      if (!complete) continue;
      bool scale_ok = true;
      try {
        seasonal_scale(insample, cfg.seasonality);
      } catch (const ValidationError&) {
        scale_ok = false;
      }
      if (!scale_ok) continue;
      std::span<const double> pred(preds.data() + v * cfg.horizon * nq, cfg.horizon * nq);
      const auto point = median_track(pred, quantiles);
      row.mase += mase(point, actual, insample, cfg.seasonality);
      const auto c = crps_quantile(pred, actual, quantiles);
      row.crps += c.value;
      row.crps_normalized = row.crps_normalized && c.normalized;
      const auto naive = seasonal_naive(insample, cfg.horizon, cfg.seasonality);
      row.naive_mase += mase(naive, actual, insample, cfg.seasonality);
      std::vector<double> naive_q(cfg.horizon * nq);
      for (std::size_t t = 0; t < cfg.horizon; ++t) {
        for (std::size_t k = 0; k < nq; ++k) naive_q[t * nq + k] = naive[t];
      }
      row.naive_crps += crps_quantile(naive_q, actual, quantiles).value;
      ++scored;
    }
  }
  if (scored == 0) return skip("no variate window with finite targets and non-constant history");
  const double s = static_cast<double>(scored);
  row.mase /= s;
  row.crps /= s;
  row.naive_mase /= s;
  row.naive_crps /= s;
  return row;
}

template <typename Real>
EvalReport rolling_eval(const Model<Real>& model, const std::vector<EntitySeries>& data,
                        const EvalConfig& cfg, const std::vector<InferenceMode>& modes,
                        const std::string& dataset = "") {
  EvalReport report;
  for (const auto& series : data) {
    for (InferenceMode mode : modes) {
      std::string why;
      if (auto row = evaluate_entity(model, series, cfg, mode, &why)) {
        row->dataset = dataset;
        report.rows.push_back(*row);
      } else {
        report.skipped.push_back(why);
        break;
      }
    }
  }
  return report;
}

struct ModeSummary {
  InferenceMode mode = InferenceMode::kMultivariate;
  std::size_t entities = 0;
  double mean_mase = 0.0;
  double mean_crps = 0.0;
  GeomeanResult mase_ratio;
  GeomeanResult crps_ratio;
};

inline ModeSummary summarize(const EvalReport& report, InferenceMode mode) {
  ModeSummary s;
  s.mode = mode;
  std::vector<double> mr;
  std::vector<double> cr;
  for (const auto& r : report.rows) {
    if (r.mode != mode) continue;
    ++s.entities;
    s.mean_mase += r.mase;
    s.mean_crps += r.crps;
    mr.push_back(r.mase_ratio());
    cr.push_back(r.crps_ratio());
  }
  if (s.entities) {
    s.mean_mase /= static_cast<double>(s.entities);
    s.mean_crps /= static_cast<double>(s.entities);
  }
  s.mase_ratio = aggregate_geomean(mr);
  s.crps_ratio = aggregate_geomean(cr);
  return s;
}

/// Results table: one row per (entity, mode) plus one summary row per mode
/// whose ratio columns hold geometric means.
inline std::string results_csv(const EvalReport& report, const std::vector<InferenceMode>& modes) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string out = "dataset,entity,mode,H,W,MASE,CRPS,naive_MASE,naive_CRPS,MASE_ratio,CRPS_ratio,"
                    "crps_normalized\n";
  for (const auto& r : report.rows) {
    out += r.dataset + "," + r.entity + "," + mode_name(r.mode) + "," +
           std::to_string(r.horizon) + "," + std::to_string(r.windows) + "," + num(r.mase) + "," +
           num(r.crps) + "," + num(r.naive_mase) + "," + num(r.naive_crps) + "," +
           num(r.mase_ratio()) + "," + num(r.crps_ratio()) + "," +
           (r.crps_normalized ? "1" : "0") + "\n";
  }
  for (InferenceMode mode : modes) {
    const auto s = summarize(report, mode);
    if (s.entities == 0) continue;
    const std::string dataset = report.rows.empty() ? "" : report.rows.front().dataset;
    const auto& any = report.rows.front();
    out += dataset + ",summary," + mode_name(mode) + "," + std::to_string(any.horizon) + "," +
           std::to_string(any.windows) + "," + num(s.mean_mase) + "," + num(s.mean_crps) +
           ",,," + num(s.mase_ratio.value) + "," + num(s.crps_ratio.value) + ",\n";
  }
  return out;
}

}  // namespace xvariate
