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

#include "test_util.hpp"
#include "xvariate/grad_check.hpp"
#include "xvariate/variate_attention.hpp"

using namespace xvariate;
using namespace xvariate::testing;

namespace {

UpdaParams<double> random_upda(std::size_t c, std::size_t d, double lambda, std::uint64_t seed) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  UpdaParams<double> p;
  p.bank.k_pos = leaf(random_tensor(Shape{c, d}, seed + 1, sd));
  p.bank.k_neg = leaf(random_tensor(Shape{c, d}, seed + 2, sd));
  p.bank.lambda = leaf(Tensor<double>(Shape{1}, lambda));
  p.q_w = leaf(random_tensor(Shape{d, d}, seed + 3, sd));
  p.q_b = leaf(random_tensor(Shape{d}, seed + 4, 0.1));
  p.v_w = leaf(random_tensor(Shape{d, d}, seed + 5, sd));
  p.v_b = leaf(random_tensor(Shape{d}, seed + 6, 0.1));
  return p;
}

RouterParams<double> random_router(std::size_t d, std::uint64_t seed) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  return {leaf(random_tensor(Shape{d, d}, seed + 1, sd)), leaf(random_tensor(Shape{d}, seed + 2, 0.1)),
          leaf(random_tensor(Shape{d, d}, seed + 3, sd)), leaf(random_tensor(Shape{d, d}, seed + 4, sd)),
          leaf(random_tensor(Shape{d}, seed + 5, 0.1))};
}

std::vector<double> affine(const Tensor<double>& w, const Tensor<double>* b, const double* x) {
  std::vector<double> out(w.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = b ? (*b)[i] : 0.0;
    for (std::size_t j = 0; j < w.dim(1); ++j) out[i] += w.at({i, j}) * x[j];
  }
  return out;
}

double dot(const std::vector<double>& a, const double* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> softmax(std::vector<double> x) {
  double mx = -1e300;
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : x) z += (v = std::exp(v - mx));
  for (double& v : x) v /= z;
  return x;
}

// Per-entity, per-patch loop over variates: returns [N, C, P, D].
Tensor<double> upda_oracle(const Tensor<double>& h, const EntityLayout& layout,
                           const UpdaParams<double>& p, bool differential = true) {
  const std::size_t P = h.dim(1), D = h.dim(2), C = p.bank.k_pos.shape()[0];
  const std::size_t N = layout.entity_count();
  const double lambda = p.bank.lambda.value()[0];
  Tensor<double> out(Shape{N, C, P, D});
  for (std::size_t n = 0; n < N; ++n) {
    const auto& blk = layout.entities[n];
    for (std::size_t t = 0; t < P; ++t) {
      for (std::size_t r = blk.first_row; r < blk.first_row + blk.count; ++r) {
        if (layout.padded[r]) continue;
        const double* x = h.data() + (r * P + t) * D;
        const auto q = affine(p.q_w.value(), &p.q_b.value(), x);
        const auto v = affine(p.v_w.value(), &p.v_b.value(), x);
        std::vector<double> lp(C), ln(C);
        for (std::size_t c = 0; c < C; ++c) {
          lp[c] = dot(q, p.bank.k_pos.value().data() + c * D) / std::sqrt(double(D));
          ln[c] = dot(q, p.bank.k_neg.value().data() + c * D) / std::sqrt(double(D));
        }
        const auto ap = softmax(lp);
        const auto an = softmax(ln);
        for (std::size_t c = 0; c < C; ++c) {
          const double w = differential ? ap[c] - lambda * an[c] : ap[c];
          for (std::size_t j = 0; j < D; ++j) out.at({n, c, t, j}) += w * v[j];
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST(Upda, MatchesLoopOracle) {
  const auto h = random_tensor(Shape{3, 2, 4}, 13);
  const auto layout = EntityLayout::from_counts({3});
  const auto p = random_upda(2, 4, 0.5, 130);
  const auto out = to_entity_major(upda_forward(constant(h), layout, p).value(), 1);
  EXPECT_LT(max_abs_diff(out, upda_oracle(h, layout, p)), 1e-10);
}

TEST(Upda, MultipleEntitiesWithPaddingMatchOracle) {
  const auto h = random_tensor(Shape{5, 3, 6}, 14);
  auto layout = EntityLayout::from_counts({2, 3});
  layout.padded[3] = true;
  const auto p = random_upda(3, 6, 0.7, 140);
  const auto out = to_entity_major(upda_forward(constant(h), layout, p).value(), 2);
  EXPECT_LT(max_abs_diff(out, upda_oracle(h, layout, p)), 1e-10);
}

TEST(Upda, DifferentialRowsSumToOneMinusLambda) {
  const auto h = random_tensor(Shape{4, 3, 8}, 15);
  const auto p = random_upda(4, 8, 0.37, 150);
  UpdaTrace<double> trace;
  upda_forward(constant(h), EntityLayout::from_counts({1, 3}), p, &trace);
  for (std::size_t i = 0; i < trace.diff.size() / 4; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += trace.diff[i * 4 + c];
    EXPECT_NEAR(s, 1.0 - 0.37, 1e-12);
  }
}

TEST(Upda, LambdaZeroIsPlainCrossAttention) {
  const auto h = random_tensor(Shape{3, 2, 4}, 16);
  const auto layout = EntityLayout::from_counts({3});
  const auto p = random_upda(2, 4, 0.0, 160);
  const auto out = to_entity_major(upda_forward(constant(h), layout, p).value(), 1);
  EXPECT_LT(max_abs_diff(out, upda_oracle(h, layout, p, false)), 1e-10);
}

TEST(Upda, IdenticalBanksCancelToOneMinusLambda) {
  const auto h = random_tensor(Shape{2, 2, 4}, 17);
  const auto layout = EntityLayout::from_counts({2});
  auto p = random_upda(3, 4, 0.25, 170);
  p.bank.k_neg = leaf(p.bank.k_pos.value());
  const auto out = upda_forward(constant(h), layout, p).value();
  auto p0 = p;
  p0.bank.lambda = leaf(Tensor<double>(Shape{1}, 0.0));
  const auto ref = upda_forward(constant(h), layout, p0).value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.75 * ref[i], 1e-12);
}

TEST(Upda, SinglePrototypeSumsValues) {
  const auto h = random_tensor(Shape{3, 1, 4}, 18);
  const auto p = random_upda(1, 4, 0.0, 180);
  const auto out = upda_forward(constant(h), EntityLayout::from_counts({3}), p).value();
  const auto v = linear(constant(h), p.v_w, &p.v_b).value();
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(out[j], v[j] + v[4 + j] + v[8 + j], 1e-12);
  }
}

TEST(Upda, VariatePermutationInvariance) {
  const auto h = random_tensor(Shape{3, 2, 4}, 19);
  Tensor<double> hp(h.shape());
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t k = 0; k < 8; ++k) hp[r * 8 + k] = h[perm[r] * 8 + k];
  }
  const auto layout = EntityLayout::from_counts({3});
  const auto p = random_upda(2, 4, 0.5, 190);
  EXPECT_LT(max_abs_diff(upda_forward(constant(h), layout, p).value(),
                         upda_forward(constant(hp), layout, p).value()),
            1e-10);
}

TEST(Orthogonality, MatchesDoubleLoop) {
  const auto kp = random_tensor(Shape{3, 5}, 21);
  const auto kn = random_tensor(Shape{3, 5}, 22);
  const double loss = orthogonality_loss(constant(kp), constant(kn)).item();
  double ref = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      double d = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        d += kp.at({a, j}) * kn.at({b, j});
        na += kp.at({a, j}) * kp.at({a, j});
        nb += kn.at({b, j}) * kn.at({b, j});
      }
      ref += std::abs(d / std::sqrt(na * nb)) / 9.0;
    }
  }
  EXPECT_NEAR(loss, ref, 1e-12);
}

TEST(Orthogonality, Examples) {
  const auto eye = identity<double>(3);
  EXPECT_NEAR(orthogonality_loss(constant(eye), constant(eye)).item(), 1.0 / 3.0, 1e-15);
  Tensor<double> kp(Shape{2, 4}, std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0});
  Tensor<double> kn(Shape{2, 4}, std::vector<double>{0, 0, 1, 0, 0, 0, 0, 2});
  EXPECT_EQ(orthogonality_loss(constant(kp), constant(kn)).item(), 0.0);
}

TEST(Orthogonality, GradientCheck) {
  ParamStore<double> ps;
  auto kp = ps.add("kp", random_tensor(Shape{3, 4}, 23));
  auto kn = ps.add("kn", random_tensor(Shape{3, 4}, 24));
  EXPECT_LT(grad_check([&] { return orthogonality_loss(kp, kn); }, ps).max_rel_error, 1e-6);
}

TEST(Lea, MatchesFlattenThenAttend) {
  const std::size_t N = 2, C = 2, P = 1, D = 4;
  const auto hc = random_tensor(Shape{P, N * C, D}, 17);
  std::vector<EncoderLayerParams<double>> layers{random_encoder_layer(D, 2, 1700)};
  const auto out = lea_forward(constant(hc), layers).value();
  // Flatten the [N, C] token grid of the entity-major view into one sequence.
  const auto em = to_entity_major(hc, N);
  Tensor<double> seq(Shape{1, N * C, D});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < D; ++j) seq.at({0, n * C + c, j}) = em.at({n, c, 0, j});
    }
  }
  const auto ref = encoder_layer(constant(seq), layers[0]).value();
  EXPECT_LT(max_abs_diff(out, ref), 1e-10);
  EXPECT_EQ(max_abs_diff(lea_forward(constant(hc), {}).value(), hc), 0.0);
}

TEST(Lea, PaddedEntityPatchesAreHidden) {
  auto layout = EntityLayout::from_counts({1, 1});
  layout.entities[1].pad_patches = 1;
  const Mask valid = prototype_token_valid(layout, 2, 2);
  EXPECT_EQ(valid.at({0, 2}), 0);
  EXPECT_EQ(valid.at({0, 1}), 1);
  EXPECT_EQ(valid.at({1, 3}), 1);
}

TEST(Vrr, MatchesPerEntityLoop) {
  const std::size_t M = 2, C = 3, P = 2, D = 4;
  const auto ht = random_tensor(Shape{M, P, D}, 19);
  const auto hc = random_tensor(Shape{P, C, D}, 20);
  const auto layout = EntityLayout::from_counts({2});
  const auto p = random_router(D, 1900);
  RouterTrace<double> trace;
  const auto out = vrr_route(constant(ht), constant(hc), layout, p, &trace).value();
  for (std::size_t j = 0; j < M; ++j) {
    for (std::size_t t = 0; t < P; ++t) {
      const auto req = affine(p.request_w.value(), &p.request_b.value(), ht.data() + (j * P + t) * D);
      std::vector<double> logits(C);
      std::vector<std::vector<double>> ctx;
      for (std::size_t c = 0; c < C; ++c) {
        const double* tok = hc.data() + (t * C + c) * D;
        logits[c] = dot(req, affine(p.index_w.value(), nullptr, tok).data()) / 2.0;
        ctx.push_back(affine(p.context_w.value(), &p.context_b.value(), tok));
      }
      const auto w = softmax(logits);
      for (std::size_t k = 0; k < D; ++k) {
        double ref = 0.0;
        for (std::size_t c = 0; c < C; ++c) ref += w[c] * ctx[c][k];
        EXPECT_NEAR(out.at({j, t, k}), ref, 1e-10);
      }
    }
  }
}

TEST(Vrr, RoutingRowsStochasticAndConfined) {
  const auto ht = random_tensor(Shape{5, 2, 4}, 25);
  const auto hc = random_tensor(Shape{2, 6, 4}, 26);
  const auto layout = EntityLayout::from_counts({2, 3});
  RouterTrace<double> trace;
  vrr_route(constant(ht), constant(hc), layout, random_router(4, 2500), &trace);
  const auto owner = layout.row_entity();
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) {
        const double w = trace.weights.at({t, j, k});
        EXPECT_GE(w, 0.0);
        if (k / 3 != owner[j]) EXPECT_EQ(w, 0.0);
        s += w;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Vrr, IdenticalContextsGiveThatContext) {
  const auto ht = random_tensor(Shape{2, 1, 4}, 27);
  Tensor<double> hc(Shape{1, 3, 4});
  const auto row = random_tensor(Shape{4}, 28);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < 4; ++j) hc.at({0, c, j}) = row[j];
  }
  const auto p = random_router(4, 2700);
  const auto out =
      vrr_route(constant(ht), constant(hc), EntityLayout::from_counts({2}), p).value();
  const double* tok = hc.data();
  const auto ctx = affine(p.context_w.value(), &p.context_b.value(), tok);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.at({j, 0, k}), ctx[k], 1e-12);
  }
}

TEST(Gate, Examples) {
  const auto ht = random_tensor(Shape{2, 2, 4}, 31);
  const auto hv = random_tensor(Shape{2, 2, 4}, 32);
  GateParams<double> zero{constant(Tensor<double>(Shape{4, 4})), constant(Tensor<double>(Shape{4}))};
  const auto half = gated_fuse(constant(ht), constant(hv), zero).value();
  for (std::size_t i = 0; i < ht.size(); ++i) EXPECT_NEAR(half[i], ht[i] + 0.5 * hv[i], 1e-15);
  GateParams<double> closed{constant(Tensor<double>(Shape{4, 4})),
                            constant(Tensor<double>(Shape{4}, -50.0))};
  const auto shut = gated_fuse(constant(ht), constant(hv), closed).value();
  EXPECT_LT(max_abs_diff(shut, ht), 1e-12);
  const auto none =
      gated_fuse(constant(ht), constant(Tensor<double>(ht.shape())), zero).value();
  EXPECT_EQ(max_abs_diff(none, ht), 0.0);
}
