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

// Flexible-length window sampling, variate permutation and capping, and
// greedy variate-budget batch assembly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "xvariate/config.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/preprocess.hpp"

namespace xvariate {

using Rng = std::mt19937_64;

/// A drawn window over one entity, before or after variate selection.
struct WindowSample {
  std::size_t entity = 0;  // index into the corpus
  std::string entity_id;
  std::size_t start = 0;    // first history index
  std::size_t context = 0;  // L_i
  std::size_t horizon = 0;  // T_i
  std::vector<std::size_t> variates;

  std::size_t variate_count() const { return variates.size(); }

  /// History [start, start+L) and targets [start+L, start+L+T) of the
  /// selected variates, in selection order.
  SeriesWindow window(const EntitySeries& series) const {
    SeriesWindow w;
    w.entity_id = series.id;
    w.horizon = horizon;
    for (std::size_t v : variates) {
      const auto& row = series.values.at(v);
      w.history.emplace_back(row.begin() + static_cast<std::ptrdiff_t>(start),
                             row.begin() + static_cast<std::ptrdiff_t>(start + context));
      w.future.emplace_back(
          row.begin() + static_cast<std::ptrdiff_t>(start + context),
          row.begin() + static_cast<std::ptrdiff_t>(start + context + horizon));
    }
    return w;
  }
};

inline std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Draws T_i from the multiples of the patch length in [L_p, T_max], then L_i
/// uniformly from [L_min, min(L_cap, remaining)], then a uniform start.
/// Returns nullopt (with `reason`) when the entity is too short.
inline std::optional<WindowSample> sample_window(const EntitySeries& series,
                                                 std::size_t entity_index, Rng& rng,
                                                 const SamplerConfig& cfg,
                                                 std::size_t patch_len,
                                                 std::string* reason = nullptr) {
  const std::size_t len = series.length();
  if (len < cfg.min_context + patch_len) {
    if (reason) {
      *reason = series.id + ": length " + std::to_string(len) + " < min_context " +
                std::to_string(cfg.min_context) + " + patch " + std::to_string(patch_len);
    }
    return std::nullopt;
  }
  const std::size_t max_h =
      std::min(cfg.max_horizon, (len - cfg.min_context) / patch_len * patch_len);
  const std::size_t horizon = patch_len * uniform_index(rng, 1, max_h / patch_len);
  const std::size_t max_l = std::min(cfg.context_cap, len - horizon);
  const std::size_t context = uniform_index(rng, cfg.min_context, max_l);
  const std::size_t start = uniform_index(rng, 0, len - context - horizon);
  WindowSample s;
  s.entity = entity_index;
  s.entity_id = series.id;
  s.start = start;
  s.context = context;
  s.horizon = horizon;
  s.variates.resize(series.variates());
  std::iota(s.variates.begin(), s.variates.end(), std::size_t{0});
  return s;
}

/// Shuffles the variate order, drops variates with no observed history in
/// the window, then keeps at most `max_variates`.
inline std::optional<WindowSample> permute_and_cap(WindowSample sample,
                                                   const EntitySeries& series, Rng& rng,
                                                   std::size_t max_variates) {
  if (max_variates == 0) throw ValidationError("permute_and_cap: max_variates must be >= 1");
  std::shuffle(sample.variates.begin(), sample.variates.end(), rng);
  std::vector<std::size_t> kept;
  for (std::size_t v : sample.variates) {
    const auto& row = series.values.at(v);
    bool observed = false;
    for (std::size_t t = sample.start; t < sample.start + sample.context && !observed; ++t) {
      observed = std::isfinite(row[t]);
    }
    if (!observed) continue;
    kept.push_back(v);
    if (kept.size() == max_variates) break;
  }
  if (kept.empty()) return std::nullopt;
  sample.variates = std::move(kept);
  return sample;
}

/// Greedy variate-budget batching: append while the running variate total
/// stays within budget; the first sample that would overflow is carried into
/// the next batch.
class BatchAssembler {
 public:
  using Source = std::function<std::optional<WindowSample>()>;

  explicit BatchAssembler(std::size_t variate_budget) : budget_(variate_budget) {
    if (budget_ == 0) throw ValidationError("variate budget must be positive");
  }

  std::vector<WindowSample> next(const Source& source) {
    std::vector<WindowSample> batch;
    std::size_t total = 0;
    while (total < budget_) {
      std::optional<WindowSample> s;
      if (carry_) {
        s = std::move(carry_);
        carry_.reset();
      } else {
        s = source();
      }
      if (!s) break;
      if (s->variate_count() > budget_) {
        throw ValidationError("sample with " + std::to_string(s->variate_count()) +
                              " variates exceeds the variate budget " +
                              std::to_string(budget_));
      }
      if (total + s->variate_count() > budget_) {
        carry_ = std::move(s);
        break;
      }
      total += s->variate_count();
      batch.push_back(std::move(*s));
    }
    return batch;
  }

  bool has_carry() const { return carry_.has_value(); }

 private:
  std::size_t budget_;
  std::optional<WindowSample> carry_;
};

/// Batch of samples with the shared padded grid and prepared tensors.
template <typename Real = double>
struct AssembledBatch {
  std::vector<WindowSample> samples;
  std::size_t context = 0;  // L_max, aligned
  std::size_t horizon = 0;  // T_max
  std::size_t variates = 0;
  PreparedBatch<Real> prepared;
};

/// Left-pads contexts to the aligned batch maximum and right-pads targets to
/// `max_horizon`.
template <typename Real = double>
AssembledBatch<Real> assemble_batch(std::vector<WindowSample> samples,
                                    const std::vector<EntitySeries>& corpus,
                                    std::size_t max_horizon, std::size_t patch_len,
                                    NormMode mode = NormMode::kAsinh) {
  if (samples.empty()) throw ValidationError("assemble_batch: empty batch");
  AssembledBatch<Real> b;
  std::size_t l_max = 0;
  std::vector<SeriesWindow> windows;
  for (const auto& s : samples) {
    l_max = std::max(l_max, s.context);
    b.variates += s.variate_count();
    windows.push_back(s.window(corpus.at(s.entity)));
  }
  // (L_max + T_max) must be a whole number of patches.
  const std::size_t width = (l_max + max_horizon + patch_len - 1) / patch_len * patch_len;
  b.context = width - max_horizon;
  b.horizon = max_horizon;
  b.prepared = prepare_batch<Real>(windows, b.context, b.horizon, patch_len, mode);
  b.samples = std::move(samples);
  return b;
}

/// Endless seeded stream of sampled, permuted, capped windows drawn from
/// uniformly chosen entities.
class SampleStream {
 public:
  SampleStream(const std::vector<EntitySeries>& corpus, SamplerConfig cfg,
               std::size_t patch_len, std::uint64_t seed)
      : corpus_(corpus), cfg_(cfg), patch_len_(patch_len), rng_(seed) {
    if (corpus_.empty()) throw ValidationError("sample stream: empty corpus");
  }

  void set_univariate_fraction(double p) { cfg_.univariate_fraction = p; }

  WindowSample next() {
    constexpr std::size_t kMaxAttempts = 10000;
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const std::size_t e = uniform_index(rng_, 0, corpus_.size() - 1);
      std::string reason;
      auto s = sample_window(corpus_[e], e, rng_, cfg_, patch_len_, &reason);
      if (!s) {
        ++skipped_[reason];
        continue;
      }
      auto capped = permute_and_cap(std::move(*s), corpus_[e], rng_, cfg_.max_variates);
      if (!capped) {
        ++skipped_[corpus_[e].id + ": no observed variates in window"];
        continue;
      }
      if (cfg_.univariate_fraction > 0.0 && capped->variate_count() > 1 &&
          std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < cfg_.univariate_fraction) {
        capped->variates.resize(1);
      }
      return *capped;
    }
    throw ValidationError("sample stream: no usable window after " +
                          std::to_string(kMaxAttempts) + " attempts");
  }

  const std::map<std::string, std::size_t>& skipped() const { return skipped_; }

 private:
  const std::vector<EntitySeries>& corpus_;
  SamplerConfig cfg_;
  std::size_t patch_len_;
  Rng rng_;
  std::map<std::string, std::size_t> skipped_;
};

}  // namespace xvariate
