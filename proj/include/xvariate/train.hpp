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

// Training loop (sampling, loss, clipping, AdamW, schedule, checkpoint
// hooks) and the whole-model gradient check.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xvariate/config.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/grad_check.hpp"
#include "xvariate/model.hpp"
#include "xvariate/optim.hpp"
#include "xvariate/sampling.hpp"

namespace xvariate {

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double prediction = 0.0;
  double orthogonality = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t entities = 0;
  std::size_t variates = 0;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  // Called every checkpoint_every steps and after the last step.
  std::function<void(std::size_t step)> on_checkpoint;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::map<std::string, std::size_t> skipped_windows;
};

/// Names matching an entry of `frozen` exactly or as a dotted prefix.
template <typename Real>
std::set<std::string> frozen_names(const ParamStore<Real>& params,
                                   const std::vector<std::string>& frozen) {
  std::set<std::string> out;
  for (const auto& e : params.entries()) {
    for (const auto& f : frozen) {
      if (e.name == f || e.name.rfind(f + ".", 0) == 0) out.insert(e.name);
    }
  }
  return out;
}

inline std::string describe_batch(const std::vector<WindowSample>& samples) {
  std::ostringstream os;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (i) os << ' ';
    os << s.entity_id << "@" << s.start << "+" << s.context << "/" << s.horizon;
  }
  return os.str();
}

/// Mean of the trailing `window` losses ending at 1-based step `step`.
inline double smoothed_loss(const std::vector<StepRecord>& steps, std::size_t step,
                            std::size_t window = 50) {
  if (step == 0 || step > steps.size()) throw ValidationError("smoothed_loss: step out of range");
  const std::size_t first = step > window ? step - window : 0;
  double sum = 0.0;
  for (std::size_t i = first; i < step; ++i) sum += steps[i].loss;
  return sum / static_cast<double>(step - first);
}

/// Runs schedule.total_steps optimizer steps. Step s (1-based) uses
/// lr_at_step(s). With the two-stage curriculum the first
/// stage_one_fraction of steps sees univariate samples only; afterwards the
/// configured univariate fraction applies.
template <typename Real>
TrainResult train(Model<Real>& model, const std::vector<EntitySeries>& corpus,
                  const Config& cfg, std::uint64_t seed, const TrainHooks& hooks = {}) {
  validate(cfg);
  if (!(cfg.model == model.config())) {
    throw ValidationError("train: model was built from a different model config");
  }
  const auto& params = model.params();
  const auto frozen = frozen_names(params, cfg.train.frozen);
  AdamW<Real> opt(params, {cfg.train.beta1, cfg.train.beta2, cfg.train.weight_decay,
                           cfg.train.adam_eps});
  SampleStream stream(corpus, cfg.sampler, cfg.model.patch_len, seed);
  BatchAssembler assembler(cfg.sampler.variate_budget);
  const BatchAssembler::Source source = [&stream]() -> std::optional<WindowSample> {
    return stream.next();
  };
  const std::size_t total = cfg.schedule.total_steps;
  const auto stage_one = static_cast<std::size_t>(
      std::llround(cfg.train.stage_one_fraction * static_cast<double>(total)));

  TrainResult result;
  result.steps.reserve(total);
  for (std::size_t step = 1; step <= total; ++step) {
    if (cfg.train.curriculum == Curriculum::kTwoStage) {
      stream.set_univariate_fraction(step <= stage_one ? 1.0 : cfg.sampler.univariate_fraction);
    }
    auto samples = assembler.next(source);
    auto batch = assemble_batch<Real>(std::move(samples), corpus, cfg.sampler.max_horizon,
                                      cfg.model.patch_len, cfg.model.norm_mode);
    params.zero_grad();
    auto terms = model.loss(batch.prepared, cfg.train.alpha);
    const double loss = static_cast<double>(terms.total.item());
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         "; batch: " + describe_batch(batch.samples));
    }
    backward(terms.total);
    StepRecord rec;
    rec.step = step;
    rec.loss = loss;
    rec.prediction = terms.prediction;
    rec.orthogonality = terms.orthogonality;
    rec.lr = lr_at_step(step, cfg.schedule);
    rec.grad_norm = clip_grad_norm(params, cfg.train.clip_norm);
    rec.entities = batch.samples.size();
    rec.variates = batch.variates;
    if (!std::isfinite(rec.grad_norm)) {
      for (const auto& e : params.entries()) {
        if (!e.var.grad().all_finite()) {
          throw NumericError("non-finite gradient in parameter " + e.name + " at step " +
                             std::to_string(step) + "; batch: " + describe_batch(batch.samples));
        }
      }
    }
    opt.step(rec.lr, frozen);
    result.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    const std::size_t every = cfg.train.checkpoint_every;
    if (hooks.on_checkpoint && ((every > 0 && step % every == 0) || step == total)) {
      hooks.on_checkpoint(step);
    }
  }
  result.skipped_windows = stream.skipped();
  return result;
}

/// Gradient check of the full training loss on a tiny random batch: two
/// entities with one and two variates, context 2*L_p, horizon L_p (three
/// patches), one missing history value. Analytic gradients come from the
/// 64-bit model; central differences are taken on an extended-precision copy
/// so that probe rounding stays far below the tolerance.
inline GradCheckReport grad_check_model(const Config& cfg, std::uint64_t seed,
                                        double step = 1e-5) {
  validate(cfg);
  Model<double> model(cfg.model, seed);
  const std::size_t lp = cfg.model.patch_len;
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> normal;
  std::vector<SeriesWindow> windows(2);
  for (std::size_t e = 0; e < windows.size(); ++e) {
    auto& w = windows[e];
    w.entity_id = "g" + std::to_string(e);
    w.horizon = lp;
    for (std::size_t v = 0; v <= e; ++v) {
      std::vector<double> history(2 * lp);
      std::vector<double> future(lp);
      for (double& x : history) x = normal(rng);
      for (double& x : future) x = normal(rng);
      w.history.push_back(std::move(history));
      w.future.push_back(std::move(future));
    }
  }
  windows[1].history[1][1] = std::numeric_limits<double>::quiet_NaN();
  const auto batch = prepare_batch<double>(windows, 2 * lp, lp, lp, cfg.model.norm_mode);
  const auto batch_hi = batch.cast<long double>();
  const Model<long double> hi = model.cast<long double>();
  const double alpha = cfg.train.alpha;
  return grad_check_mixed([&] { return model.loss(batch, alpha).total; }, model.params(),
                          [&] { return hi.loss(batch_hi, alpha).total.item(); }, hi.params(),
                          step, frozen_names(model.params(), cfg.train.frozen));
}

}  // namespace xvariate
