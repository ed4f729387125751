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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "xvariate/synthetic.hpp"
#include "xvariate/train.hpp"

using namespace xvariate;
using namespace xvariate::testing;

namespace {

void set_grad(const Var<double>& v, const std::vector<double>& g) {
  auto& buf = v.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i];
}

std::vector<EntitySeries> small_corpus(std::uint64_t seed) {
  CorpusSpec spec;
  spec.lead_lag_entities = 6;
  spec.kernel_entities = 2;
  spec.length = 48;
  spec.lag_min = 1;
  spec.lag_max = 3;
  return series_of(generate_corpus(spec, seed));
}

Config short_run() {
  Config cfg = tiny_config();
  cfg.schedule.total_steps = 12;
  cfg.schedule.peak_lr = 1e-2;
  cfg.schedule.final_lr = 1e-3;
  cfg.schedule.warmup_fraction = 0.25;
  cfg.train.checkpoint_every = 5;
  return cfg;
}

}  // namespace

TEST(Schedule, EndpointsUnderDefaults) {
  const ScheduleConfig s;
  EXPECT_EQ(warmup_steps(s), 2u);
  EXPECT_EQ(lr_at_step(1, s), 3e-5);
  EXPECT_EQ(lr_at_step(2, s), 6e-5);
  EXPECT_EQ(lr_at_step(2000, s), 6e-6);
  EXPECT_EQ(lr_at_step(5000, s), 6e-6);
  EXPECT_NEAR(lr_at_step(1001, s), 0.5 * (6e-5 + 6e-6), 1e-18);
}

TEST(Schedule, WarmupLinearThenMonotoneDecay) {
  ScheduleConfig s;
  s.peak_lr = 1.0;
  s.final_lr = 0.1;
  s.warmup_fraction = 0.1;
  s.total_steps = 100;
  EXPECT_EQ(warmup_steps(s), 10u);
  for (std::size_t k = 1; k <= 10; ++k) EXPECT_DOUBLE_EQ(lr_at_step(k, s), k / 10.0);
  for (std::size_t k = 11; k <= 100; ++k) {
    EXPECT_LT(lr_at_step(k, s), lr_at_step(k - 1, s));
    EXPECT_GE(lr_at_step(k, s), 0.1);
  }
  s.warmup_fraction = 0.0;
  EXPECT_EQ(warmup_steps(s), 1u);
  EXPECT_EQ(lr_at_step(1, s), 1.0);
}

TEST(AdamW, ThreeStepOracle) {
  ParamStore<double> params;
  const auto w = params.add("w", random_tensor(Shape{5}, 41));
  const auto untouched = params.add("b", random_tensor(Shape{2}, 42));
  AdamWOptions opt{0.9, 0.95, 0.1, 1e-8};
  AdamW<double> adam(params, opt);
  std::vector<long double> theta(w.value().values().begin(), w.value().values().end());
  std::vector<long double> m(5, 0.0L), v(5, 0.0L);
  std::vector<long double> th_b(untouched.value().values().begin(),
                                untouched.value().values().end());
  const std::vector<double> lrs{1e-2, 5e-3, 2e-3};
  std::mt19937_64 rng(43);
  for (int t = 1; t <= 3; ++t) {
    params.zero_grad();
    const auto g = random_vector(5, rng);
    set_grad(w, g);
    adam.step(lrs[t - 1]);
    const long double lr = lrs[t - 1];
    for (std::size_t k = 0; k < 5; ++k) {
      m[k] = 0.9L * m[k] + 0.1L * g[k];
      v[k] = 0.95L * v[k] + 0.05L * g[k] * g[k];
      const long double mh = m[k] / (1 - std::pow(0.9L, t));
      const long double vh = v[k] / (1 - std::pow(0.95L, t));
      theta[k] = theta[k] * (1 - lr * 0.1L) - lr * mh / (std::sqrt(vh) + 1e-8L);
    }
    for (auto& x : th_b) x *= 1 - lr * 0.1L;
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_NEAR(w.value()[k], static_cast<double>(theta[k]), 1e-14);
    }
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_NEAR(untouched.value()[k], static_cast<double>(th_b[k]), 1e-15);
    }
  }
  EXPECT_EQ(adam.steps(), 3u);
}

TEST(AdamW, ZeroGradientIsPureDecay) {
  ParamStore<double> params;
  const auto w = params.add("w", random_tensor(Shape{7}, 44));
  const Tensor<double> before = w.value();
  AdamW<double> adam(params, {0.9, 0.95, 0.1, 1e-8});
  set_grad(w, std::vector<double>(7, 0.0));
  adam.step(6e-5);
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(w.value()[k], before[k] * (1.0 - 6e-5 * 0.1));
}

TEST(AdamW, FirstStepMovesByLrAgainstGradientSign) {
  ParamStore<double> params;
  const auto w = params.add("w", Tensor<double>(Shape{3}));
  AdamW<double> adam(params, {0.9, 0.95, 0.0, 1e-12});
  set_grad(w, {2.5, -0.01, 0.0});
  adam.step(1e-3);
  EXPECT_NEAR(w.value()[0], -1e-3, 1e-12);
  EXPECT_NEAR(w.value()[1], 1e-3, 1e-9);
  EXPECT_EQ(w.value()[2], 0.0);
}

TEST(AdamW, FrozenParametersDoNotMove) {
  ParamStore<double> params;
  const auto a = params.add("enc.w", random_tensor(Shape{3}, 45));
  const auto b = params.add("head.w", random_tensor(Shape{3}, 46));
  const Tensor<double> a0 = a.value(), b0 = b.value();
  AdamW<double> adam(params, {});
  set_grad(a, {1, 1, 1});
  set_grad(b, {1, 1, 1});
  adam.step(1e-2, frozen_names(params, {"enc"}));
  EXPECT_EQ(max_abs_diff(a.value(), a0), 0.0);
  EXPECT_GT(max_abs_diff(b.value(), b0), 0.0);
}

TEST(AdamW, NonFiniteGradientAbortsBeforeUpdate) {
  ParamStore<double> params;
  const auto a = params.add("a", random_tensor(Shape{2}, 47));
  const auto b = params.add("b", random_tensor(Shape{2}, 48));
  const Tensor<double> a0 = a.value();
  AdamW<double> adam(params, {});
  set_grad(a, {1, 1});
  set_grad(b, {std::numeric_limits<double>::infinity(), 0});
  try {
    adam.step(1e-2);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_EQ(max_abs_diff(a.value(), a0), 0.0);
  EXPECT_EQ(adam.steps(), 0u);
}

TEST(Clip, RescalesToMaxNorm) {
  ParamStore<double> params;
  const auto a = params.add("a", Tensor<double>(Shape{2}));
  const auto b = params.add("b", Tensor<double>(Shape{1}));
  set_grad(a, {3, 0});
  set_grad(b, {4});
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), 5.0);
  EXPECT_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.8);
  EXPECT_NEAR(clip_grad_norm(params, 0.0), 1.0, 1e-15);
}

TEST(FrozenNames, ExactOrDottedPrefix) {
  ParamStore<double> params;
  params.add("upda.k_pos", Tensor<double>(Shape{1}));
  params.add("updates", Tensor<double>(Shape{1}));
  params.add("head.weight", Tensor<double>(Shape{1}));
  EXPECT_EQ(frozen_names(params, {"upda"}), (std::set<std::string>{"upda.k_pos"}));
  EXPECT_EQ(frozen_names(params, {"head.weight", "updates"}),
            (std::set<std::string>{"head.weight", "updates"}));
}

TEST(SmoothedLoss, TrailingMean) {
  std::vector<StepRecord> steps(5);
  for (std::size_t i = 0; i < 5; ++i) steps[i].loss = static_cast<double>(i + 1);
  EXPECT_DOUBLE_EQ(smoothed_loss(steps, 5, 2), 4.5);
  EXPECT_DOUBLE_EQ(smoothed_loss(steps, 2, 50), 1.5);
  EXPECT_THROW(smoothed_loss(steps, 6), ValidationError);
  EXPECT_THROW(smoothed_loss(steps, 0), ValidationError);
}

TEST(Train, DeterministicForSeed) {
  const auto corpus = small_corpus(1);
  const Config cfg = short_run();
  Model<double> a(cfg.model, 3), b(cfg.model, 3);
  std::vector<std::size_t> checkpoints;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](std::size_t s) { checkpoints.push_back(s); };
  const auto ra = train(a, corpus, cfg, 5, hooks);
  const auto rb = train(b, corpus, cfg, 5);
  ASSERT_EQ(ra.steps.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(ra.steps[i].loss, rb.steps[i].loss);
    EXPECT_EQ(ra.steps[i].lr, lr_at_step(i + 1, cfg.schedule));
    EXPECT_LE(ra.steps[i].variates, cfg.sampler.variate_budget);
    EXPECT_TRUE(std::isfinite(ra.steps[i].grad_norm));
  }
  for (const auto& e : a.params().entries()) {
    EXPECT_EQ(max_abs_diff(e.var.value(), b.params().get(e.name).value()), 0.0) << e.name;
  }
  EXPECT_EQ(checkpoints, (std::vector<std::size_t>{5, 10, 12}));
}

TEST(Train, FrozenGroupKeepsInitialValues) {
  const auto corpus = small_corpus(2);
  Config cfg = short_run();
  cfg.train.frozen = {"upda"};
  Model<double> model(cfg.model, 4);
  const Model<double> initial = model;
  train(model, corpus, cfg, 6);
  for (const auto& e : model.params().entries()) {
    const double d = max_abs_diff(e.var.value(), initial.params().get(e.name).value());
    if (e.name.rfind("upda.", 0) == 0) {
      EXPECT_EQ(d, 0.0) << e.name;
    } else {
      EXPECT_GT(d, 0.0) << e.name;
    }
  }
}

TEST(Train, TwoStageCurriculumStartsUnivariate) {
  const auto corpus = small_corpus(3);
  Config cfg = short_run();
  cfg.train.curriculum = Curriculum::kTwoStage;
  cfg.train.stage_one_fraction = 0.5;
  Model<double> model(cfg.model, 5);
  const auto r = train(model, corpus, cfg, 7);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.steps[i].variates, r.steps[i].entities);
  bool multi = false;
  for (std::size_t i = 6; i < 12; ++i) multi |= r.steps[i].variates > r.steps[i].entities;
  EXPECT_TRUE(multi);
}

TEST(Train, NonFiniteLossAbortsWithBatch) {
  const auto corpus = small_corpus(4);
  const Config cfg = short_run();
  Model<double> model(cfg.model, 6);
  Var<double> bias = model.params().get("head.bias");
  bias.mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(model, corpus, cfg, 8);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("e0000"), std::string::npos) << msg;
  }
}

TEST(Train, ConfigMismatchRejected) {
  const auto corpus = small_corpus(5);
  Config cfg = short_run();
  Model<double> model(cfg.model, 7);
  cfg.model.lambda_init = 0.25;
  EXPECT_THROW(train(model, corpus, cfg, 9), ValidationError);
}

TEST(Train, LossDecreasesOnTinyProblem) {
  const auto corpus = small_corpus(6);
  Config cfg = tiny_config();
  cfg.schedule.total_steps = 300;
  cfg.schedule.peak_lr = 5e-3;
  cfg.schedule.final_lr = 5e-4;
  cfg.schedule.warmup_fraction = 0.05;
  Model<double> model(cfg.model, 8);
  const auto r = train(model, corpus, cfg, 10);
  EXPECT_LT(smoothed_loss(r.steps, 300), smoothed_loss(r.steps, 50));
}
