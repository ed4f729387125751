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

// Cross-variate pathway. Variates of each entity are pooled onto C shared
// prototypes with a positive-minus-lambda-negative attention score, prototype
// tokens of all entities attend to each other per patch, and a soft router
// maps the refined prototypes back onto each entity's own variates. A sigmoid
// gate decides how much of the routed context joins the temporal features.
//
// Layouts: H_T and H_V are [M, P, D] (variate rows). Prototype-space tensors
// are patch-major, [P, N*C, D], with token n*C + c for entity n, prototype c.

#include <cmath>
#include <cstddef>
#include <vector>

#include "xvariate/attention.hpp"
#include "xvariate/autodiff.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/layout.hpp"
#include "xvariate/tensor.hpp"

namespace xvariate {

template <typename Real>
struct PrototypeBank {
  Var<Real> k_pos;   // [C, D]
  Var<Real> k_neg;   // [C, D]
  Var<Real> lambda;  // [1]

  std::size_t prototypes() const { return k_pos.shape()[0]; }
};

template <typename Real>
struct UpdaParams {
  PrototypeBank<Real> bank;
  Var<Real> q_w, q_b;
  Var<Real> v_w, v_b;
};

template <typename Real>
struct RouterParams {
  Var<Real> request_w, request_b;  // from H_T
  Var<Real> index_w;               // from H_C'; a bias would cancel in the softmax
  Var<Real> context_w, context_b;  // from H_C'
};

template <typename Real>
struct GateParams {
  Var<Real> w, b;
};

template <typename Real>
struct UpdaTrace {
  Tensor<Real> a_pos;  // [P, M, C]
  Tensor<Real> a_neg;
  Tensor<Real> diff;   // a_pos - lambda * a_neg
};

template <typename Real>
struct RouterTrace {
  Tensor<Real> weights;  // [P, M, N*C]; zero outside the row's own entity
};

/// out[p, n*C + c, j] = E[n, j] * A[p, j, c]. With E the entity membership,
/// out[p] @ V[p] sums each entity's own variates onto its prototypes in one
/// batched product.
template <typename Real>
Var<Real> expand_by_membership(const Var<Real>& a, const Tensor<Real>& membership) {
  if (a.shape().size() != 3 || membership.rank() != 2 ||
      membership.dim(1) != a.shape()[1]) {
    throw ValidationError("expand_by_membership: scores " + shape_str(a.shape()) +
                          " vs membership " + shape_str(membership.shape()));
  }
  const std::size_t p_count = a.shape()[0];
  const std::size_t m = a.shape()[1];
  const std::size_t c = a.shape()[2];
  const std::size_t n = membership.dim(0);
  Tensor<Real> out(Shape{p_count, n * c, m});
  for (std::size_t p = 0; p < p_count; ++p) {
    for (std::size_t e = 0; e < n; ++e) {
      for (std::size_t j = 0; j < m; ++j) {
        const Real w = membership[e * m + j];
        if (w == Real(0)) continue;
        for (std::size_t k = 0; k < c; ++k) {
          out[((p * n + e) * c + k) * m + j] = w * a.value()[(p * m + j) * c + k];
        }
      }
    }
  }
  return make_result<Real>(
      std::move(out), {a},
      [a, membership, p_count, m, c, n](const Tensor<Real>& g, const Tensor<Real>&) {
        auto& ga = a.grad_buffer();
        for (std::size_t p = 0; p < p_count; ++p) {
          for (std::size_t e = 0; e < n; ++e) {
            for (std::size_t j = 0; j < m; ++j) {
              const Real w = membership[e * m + j];
              if (w == Real(0)) continue;
              for (std::size_t k = 0; k < c; ++k) {
                ga[(p * m + j) * c + k] += w * g[((p * n + e) * c + k) * m + j];
              }
            }
          }
        }
      });
}

/// H_T [M, P, D] -> H_C [P, N*C, D].
template <typename Real>
Var<Real> upda_forward(const Var<Real>& h_t, const EntityLayout& layout,
                       const UpdaParams<Real>& p, UpdaTrace<Real>* trace = nullptr) {
  if (h_t.shape().size() != 3) {
    throw ValidationError("upda_forward: expected [M,P,D], got " + shape_str(h_t.shape()));
  }
  layout.validate(h_t.shape()[0]);
  const std::size_t d = h_t.shape()[2];
  const Real s = Real(1) / std::sqrt(static_cast<Real>(d));

  Var<Real> hp = permute(h_t, {1, 0, 2});
  Var<Real> q = linear(hp, p.q_w, &p.q_b);
  Var<Real> v = linear(hp, p.v_w, &p.v_b);
  Var<Real> a_pos = softmax_lastdim(scale(matmul(q, p.bank.k_pos, true), s));
  Var<Real> a_neg = softmax_lastdim(scale(matmul(q, p.bank.k_neg, true), s));
  Var<Real> diff = sub(a_pos, scale_by(a_neg, p.bank.lambda));
  if (trace) {
    trace->a_pos = a_pos.value();
    trace->a_neg = a_neg.value();
    trace->diff = diff.value();
  }
  Var<Real> pooled = expand_by_membership(diff, layout.membership<Real>());
  return matmul(pooled, v);
}

/// Mean over all C x C row pairs of |cos(K_pos[a], K_neg[b])|.
template <typename Real>
Var<Real> orthogonality_loss(const Var<Real>& k_pos, const Var<Real>& k_neg) {
  if (k_pos.shape() != k_neg.shape() || k_pos.shape().size() != 2) {
    throw ValidationError("orthogonality_loss: banks " + shape_str(k_pos.shape()) + " and " +
                          shape_str(k_neg.shape()));
  }
  const std::size_t c = k_pos.shape()[0];
  const std::size_t d = k_pos.shape()[1];
  constexpr double kNormEps = 1e-12;
  auto norms = [c, d](const Tensor<Real>& k) {
    std::vector<Real> out(c);
    for (std::size_t i = 0; i < c; ++i) {
      Real s = 0;
      for (std::size_t j = 0; j < d; ++j) s += k[i * d + j] * k[i * d + j];
      out[i] = std::max(std::sqrt(s), static_cast<Real>(kNormEps));
    }
    return out;
  };
  const auto np = norms(k_pos.value());
  const auto nn = norms(k_neg.value());
  Tensor<Real> cosine(Shape{c, c});
  Real total = 0;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = 0; b < c; ++b) {
      Real dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += k_pos.value()[a * d + j] * k_neg.value()[b * d + j];
      cosine[a * c + b] = dot / (np[a] * nn[b]);
      total += std::abs(cosine[a * c + b]);
    }
  }
  const Real inv_pairs = Real(1) / static_cast<Real>(c * c);
  return make_result<Real>(
      Tensor<Real>::scalar(total * inv_pairs), {k_pos, k_neg},
      [k_pos, k_neg, cosine, np, nn, c, d, inv_pairs](const Tensor<Real>& g,
                                                      const Tensor<Real>&) {
        const auto& kp = k_pos.value();
        const auto& kn = k_neg.value();
        for (std::size_t a = 0; a < c; ++a) {
          for (std::size_t b = 0; b < c; ++b) {
            const Real cs = cosine[a * c + b];
            const Real sign = cs > 0 ? Real(1) : (cs < 0 ? Real(-1) : Real(0));
            if (sign == Real(0)) continue;
            const Real w = g[0] * inv_pairs * sign;
            for (std::size_t j = 0; j < d; ++j) {
              if (k_pos.requires_grad()) {
                k_pos.grad_buffer()[a * d + j] +=
                    w * (kn[b * d + j] / (np[a] * nn[b]) - cs * kp[a * d + j] / (np[a] * np[a]));
              }
              if (k_neg.requires_grad()) {
                k_neg.grad_buffer()[b * d + j] +=
                    w * (kp[a * d + j] / (np[a] * nn[b]) - cs * kn[b * d + j] / (nn[b] * nn[b]));
              }
            }
          }
        }
      });
}

/// [P, N*C]: prototype token (n, c) is real at patch p unless that patch lies
/// entirely in entity n's left padding.
template <typename Real = double>
Mask prototype_token_valid(const EntityLayout& layout, std::size_t patches,
                           std::size_t prototypes) {
  const std::size_t n = layout.entity_count();
  Mask valid(Shape{patches, n * prototypes}, 1);
  for (std::size_t p = 0; p < patches; ++p) {
    for (std::size_t e = 0; e < n; ++e) {
      if (p < layout.entities[e].pad_patches) {
        for (std::size_t c = 0; c < prototypes; ++c) valid[(p * n + e) * prototypes + c] = 0;
      }
    }
  }
  return valid;
}

/// Self-attention over the N*C prototype tokens, independently per patch.
template <typename Real>
Var<Real> lea_forward(const Var<Real>& h_c, const std::vector<EncoderLayerParams<Real>>& layers,
                      const Mask* token_valid = nullptr) {
  if (layers.empty()) return h_c;
  if (!token_valid) return encoder_stack(h_c, layers);
  const Mask mask = attention_mask_from_valid(*token_valid);
  return encoder_stack(h_c, layers, &mask);
}

/// [M, N*C]: row j may read prototype token (n, c) only when j belongs to n.
template <typename Real = double>
Mask routing_mask(const EntityLayout& layout, std::size_t prototypes) {
  const std::size_t n = layout.entity_count();
  const auto owner = layout.row_entity();
  Mask mask(Shape{layout.rows(), n * prototypes}, 0);
  for (std::size_t j = 0; j < layout.rows(); ++j) {
    for (std::size_t c = 0; c < prototypes; ++c) {
      mask[j * n * prototypes + owner[j] * prototypes + c] = 1;
    }
  }
  return mask;
}

/// Soft routing from refined prototypes back to variate rows:
/// softmax(R_req P_idx^T / sqrt(D)) S_ctx, restricted to the row's entity.
template <typename Real>
Var<Real> vrr_route(const Var<Real>& h_t, const Var<Real>& h_c_refined,
                    const EntityLayout& layout, const RouterParams<Real>& p,
                    RouterTrace<Real>* trace = nullptr) {
  layout.validate(h_t.shape()[0]);
  const std::size_t d = h_t.shape()[2];
  const std::size_t tokens = h_c_refined.shape()[1];
  if (layout.entity_count() == 0 || tokens % layout.entity_count() != 0) {
    throw ValidationError("vrr_route: " + std::to_string(tokens) +
                          " prototype tokens do not divide among " +
                          std::to_string(layout.entity_count()) + " entities");
  }
  const std::size_t prototypes = tokens / layout.entity_count();
  Var<Real> hp = permute(h_t, {1, 0, 2});
  Var<Real> request = linear(hp, p.request_w, &p.request_b);
  Var<Real> index = linear(h_c_refined, p.index_w);
  Var<Real> context = linear(h_c_refined, p.context_w, &p.context_b);
  const Mask mask = routing_mask(layout, prototypes);
  Var<Real> weights = softmax_lastdim(
      scale(matmul(request, index, true), Real(1) / std::sqrt(static_cast<Real>(d))), &mask);
  if (trace) trace->weights = weights.value();
  return permute(matmul(weights, context), {1, 0, 2});
}

/// H_T + sigmoid(Linear(H_T)) * H_V.
template <typename Real>
Var<Real> gated_fuse(const Var<Real>& h_t, const Var<Real>& h_v, const GateParams<Real>& g) {
  if (h_t.shape() != h_v.shape()) {
    throw ValidationError("gated_fuse: shape mismatch " + shape_str(h_t.shape()) + " vs " +
                          shape_str(h_v.shape()));
  }
  return add(h_t, mul(sigmoid(linear(h_t, g.w, &g.b)), h_v));
}

/// Reorders a patch-major [P, N*C, D] prototype tensor to [N, C, P, D].
template <typename Real>
Tensor<Real> to_entity_major(const Tensor<Real>& h_c, std::size_t entities) {
  const std::size_t p_count = h_c.dim(0);
  const std::size_t c = h_c.dim(1) / entities;
  const std::size_t d = h_c.dim(2);
  Tensor<Real> out(Shape{entities, c, p_count, d});
  for (std::size_t p = 0; p < p_count; ++p) {
    for (std::size_t n = 0; n < entities; ++n) {
      for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t j = 0; j < d; ++j) {
          out.at({n, k, p, j}) = h_c.at({p, n * c + k, j});
        }
      }
    }
  }
  return out;
}

}  // namespace xvariate
