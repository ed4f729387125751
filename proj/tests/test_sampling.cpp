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
#include <set>

#include "xvariate/sampling.hpp"

using namespace xvariate;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

EntitySeries ramp_series(const std::string& id, std::size_t variates, std::size_t length) {
  EntitySeries s;
  s.id = id;
  for (std::size_t v = 0; v < variates; ++v) {
    std::vector<double> row(length);
    for (std::size_t t = 0; t < length; ++t) row[t] = 1000.0 * v + t;
    s.values.push_back(std::move(row));
  }
  return s;
}

WindowSample with_variates(std::size_t count) {
  WindowSample s;
  s.variates.resize(count);
  return s;
}

}  // namespace

TEST(SampleWindow, DrawsStayInRange) {
  SamplerConfig cfg;
  cfg.min_context = 8;
  cfg.context_cap = 24;
  cfg.max_horizon = 12;
  const auto series = ramp_series("a", 3, 40);
  Rng rng(1);
  std::set<std::size_t> horizons, contexts;
  for (int i = 0; i < 2000; ++i) {
    const auto s = sample_window(series, 0, rng, cfg, 4);
    ASSERT_TRUE(s);
    EXPECT_EQ(s->horizon % 4, 0u);
    EXPECT_GE(s->horizon, 4u);
    EXPECT_LE(s->horizon, 12u);
    EXPECT_GE(s->context, 8u);
    EXPECT_LE(s->context, 24u);
    EXPECT_LE(s->start + s->context + s->horizon, 40u);
    EXPECT_EQ(s->variates, (std::vector<std::size_t>{0, 1, 2}));
    horizons.insert(s->horizon);
    contexts.insert(s->context);
  }
  EXPECT_EQ(horizons, (std::set<std::size_t>{4, 8, 12}));
  EXPECT_EQ(contexts.size(), 17u);
}

TEST(SampleWindow, ShortSeriesIsSkippedWithReason) {
  SamplerConfig cfg;
  cfg.min_context = 8;
  cfg.max_horizon = 8;
  Rng rng(2);
  std::string reason;
  EXPECT_FALSE(sample_window(ramp_series("short", 1, 11), 0, rng, cfg, 4, &reason));
  EXPECT_NE(reason.find("short"), std::string::npos);
  // Exactly min_context + one patch is enough and forces T = L_p, L = min_context.
  const auto s = sample_window(ramp_series("edge", 1, 12), 0, rng, cfg, 4);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->horizon, 4u);
  EXPECT_EQ(s->context, 8u);
  EXPECT_EQ(s->start, 0u);
}

TEST(SampleWindow, WindowSlicesHistoryAndFuture) {
  const auto series = ramp_series("a", 2, 30);
  WindowSample s;
  s.start = 5;
  s.context = 6;
  s.horizon = 4;
  s.variates = {1, 0};
  const auto w = s.window(series);
  ASSERT_EQ(w.variates(), 2u);
  EXPECT_EQ(w.history[0].front(), 1005.0);
  EXPECT_EQ(w.history[0].back(), 1010.0);
  EXPECT_EQ(w.future[0], (std::vector<double>{1011, 1012, 1013, 1014}));
  EXPECT_EQ(w.history[1].front(), 5.0);
  EXPECT_EQ(w.horizon, 4u);
}

TEST(PermuteAndCap, KeepsObservedDistinctVariatesUpToCap) {
  auto series = ramp_series("a", 5, 20);
  for (auto& v : series.values[2]) v = kNaN;
  WindowSample base;
  base.start = 0;
  base.context = 10;
  base.horizon = 4;
  base.variates = {0, 1, 2, 3, 4};
  Rng rng(3);
  std::map<std::size_t, int> first;
  for (int i = 0; i < 4000; ++i) {
    const auto s = permute_and_cap(base, series, rng, 3);
    ASSERT_TRUE(s);
    ASSERT_EQ(s->variate_count(), 3u);
    const std::set<std::size_t> unique(s->variates.begin(), s->variates.end());
    EXPECT_EQ(unique.size(), 3u);
    EXPECT_FALSE(unique.count(2));
    ++first[s->variates[0]];
  }
  // Every observed variate leads roughly a quarter of the time.
  for (std::size_t v : {0u, 1u, 3u, 4u}) {
    EXPECT_NEAR(first[v] / 4000.0, 0.25, 0.03) << v;
  }
}

TEST(PermuteAndCap, MissingOnlyInsideWindowMatters) {
  auto series = ramp_series("a", 1, 20);
  for (std::size_t t = 4; t < 10; ++t) series.values[0][t] = kNaN;
  WindowSample s;
  s.start = 4;
  s.context = 6;
  s.horizon = 2;
  s.variates = {0};
  Rng rng(4);
  EXPECT_FALSE(permute_and_cap(s, series, rng, 2));
  s.start = 3;
  EXPECT_TRUE(permute_and_cap(s, series, rng, 2));
  EXPECT_THROW(permute_and_cap(s, series, rng, 0), ValidationError);
}

TEST(BatchAssembler, GreedyFillWithCarryOver) {
  std::vector<std::size_t> sizes{3, 4, 2, 5, 1};
  std::size_t next = 0;
  BatchAssembler::Source source = [&]() -> std::optional<WindowSample> {
    if (next == sizes.size()) return std::nullopt;
    return with_variates(sizes[next++]);
  };
  BatchAssembler assembler(8);
  auto counts = [](const std::vector<WindowSample>& b) {
    std::vector<std::size_t> out;
    for (const auto& s : b) out.push_back(s.variate_count());
    return out;
  };
  EXPECT_EQ(counts(assembler.next(source)), (std::vector<std::size_t>{3, 4}));
  EXPECT_TRUE(assembler.has_carry());
  EXPECT_EQ(counts(assembler.next(source)), (std::vector<std::size_t>{2, 5, 1}));
  EXPECT_FALSE(assembler.has_carry());
  EXPECT_TRUE(assembler.next(source).empty());
}

TEST(BatchAssembler, OversizedSampleIsRejected) {
  BatchAssembler assembler(2);
  BatchAssembler::Source source = [] { return std::optional<WindowSample>(with_variates(3)); };
  EXPECT_THROW(assembler.next(source), ValidationError);
  EXPECT_THROW(BatchAssembler(0), ValidationError);
}

TEST(AssembleBatch, ContextAlignedToPatchGrid) {
  std::vector<EntitySeries> corpus{ramp_series("a", 2, 64), ramp_series("b", 1, 64)};
  WindowSample s0;
  s0.entity = 0;
  s0.start = 0;
  s0.context = 13;
  s0.horizon = 4;
  s0.variates = {0, 1};
  WindowSample s1 = s0;
  s1.entity = 1;
  s1.context = 9;
  s1.horizon = 8;
  s1.variates = {0};
  const auto b = assemble_batch<double>({s0, s1}, corpus, 8, 4);
  EXPECT_EQ(b.horizon, 8u);
  EXPECT_EQ((b.context + b.horizon) % 4, 0u);
  EXPECT_GE(b.context, 13u);
  EXPECT_LT(b.context, 13u + 4u);
  EXPECT_EQ(b.variates, 3u);
  EXPECT_EQ(b.prepared.rows(), 3u);
  // The shorter-horizon entity has invalid target cells past its own T.
  EXPECT_EQ(b.prepared.target_valid.at({0, 4}), 0.0);
  EXPECT_EQ(b.prepared.target_valid.at({2, 7}), 1.0);
  EXPECT_THROW(assemble_batch<double>({}, corpus, 8, 4), ValidationError);
}

TEST(SampleStream, DeterministicAndHonoursCaps) {
  std::vector<EntitySeries> corpus{ramp_series("a", 4, 50), ramp_series("b", 1, 50),
                                   ramp_series("tiny", 2, 5)};
  SamplerConfig cfg;
  cfg.min_context = 8;
  cfg.context_cap = 16;
  cfg.max_horizon = 8;
  cfg.max_variates = 2;
  SampleStream a(corpus, cfg, 4, 9), b(corpus, cfg, 4, 9);
  for (int i = 0; i < 200; ++i) {
    const auto x = a.next();
    const auto y = b.next();
    EXPECT_EQ(x.entity, y.entity);
    EXPECT_EQ(x.start, y.start);
    EXPECT_EQ(x.variates, y.variates);
    EXPECT_LE(x.variate_count(), 2u);
    EXPECT_NE(x.entity_id, "tiny");
  }
  EXPECT_GT(a.skipped().size(), 0u);
}

TEST(SampleStream, UnivariateFractionOne) {
  std::vector<EntitySeries> corpus{ramp_series("a", 3, 50)};
  SamplerConfig cfg;
  cfg.min_context = 8;
  cfg.context_cap = 16;
  cfg.max_horizon = 8;
  cfg.max_variates = 3;
  SampleStream stream(corpus, cfg, 4, 10);
  stream.set_univariate_fraction(1.0);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(stream.next().variate_count(), 1u);
}

TEST(SampleStream, UnusableCorpusFails) {
  std::vector<EntitySeries> corpus{ramp_series("tiny", 1, 3)};
  SamplerConfig cfg;
  cfg.min_context = 8;
  SampleStream stream(corpus, cfg, 4, 11);
  EXPECT_THROW(stream.next(), ValidationError);
}
