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

// Bidirectional multi-head self-attention and the post-norm encoder layer
// LayerNorm(x + MHA(x)), optionally followed by a GELU feed-forward sublayer
// with its own residual and norm.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "xvariate/autodiff.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/tensor.hpp"

namespace xvariate {

template <typename Real>
struct AttentionParams {
  std::size_t heads = 1;
  Var<Real> q_w, q_b;
  Var<Real> k_w;  // no key bias: it cancels in the softmax
  Var<Real> v_w, v_b;
  Var<Real> o_w, o_b;
};

template <typename Real>
struct EncoderLayerParams {
  AttentionParams<Real> attn;
  Var<Real> norm_gain, norm_bias;
  bool has_ffn = false;
  Var<Real> ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  Var<Real> ffn_norm_gain, ffn_norm_bias;
};

/// Optional capture of the post-softmax weights, [B*h, S, S].
template <typename Real>
struct AttentionTrace {
  Tensor<Real> weights;
};

/// Expands a per-(query, key) mask of shape [B, S, S] to one copy per head.
inline Mask repeat_mask_per_head(const Mask& mask, std::size_t heads) {
  const std::size_t b = mask.dim(0);
  const std::size_t ss = mask.size() / b;
  Mask out(Shape{b * heads, mask.dim(1), mask.dim(2)});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::copy_n(mask.data() + i * ss, ss, out.data() + (i * heads + h) * ss);
    }
  }
  return out;
}

/// Builds a [B, S, S] mask from per-token validity [B, S]. Valid queries see
/// only valid keys; invalid queries see everything so no row is empty.
inline Mask attention_mask_from_valid(const Mask& valid) {
  const std::size_t b = valid.dim(0);
  const std::size_t s = valid.dim(1);
  Mask out(Shape{b, s, s}, 1);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t q = 0; q < s; ++q) {
      if (!valid[i * s + q]) continue;
      for (std::size_t k = 0; k < s; ++k) out[(i * s + q) * s + k] = valid[i * s + k];
    }
  }
  return out;
}

/// x: [B, S, D]. mask: [B, S, S] or [S, S] (1 = key visible), optional.
template <typename Real>
Var<Real> multi_head_attention(const Var<Real>& x, const AttentionParams<Real>& p,
                               const Mask* mask = nullptr,
                               AttentionTrace<Real>* trace = nullptr) {
  if (x.shape().size() != 3) {
    throw ValidationError("multi_head_attention: expected [B,S,D], got " +
                          shape_str(x.shape()));
  }
  const std::size_t b = x.shape()[0];
  const std::size_t s = x.shape()[1];
  const std::size_t d = x.shape()[2];
  const std::size_t h = p.heads;
  if (h == 0 || d % h != 0) {
    throw ValidationError("multi_head_attention: width " + std::to_string(d) +
                          " not divisible by " + std::to_string(h) + " heads");
  }
  const std::size_t dh = d / h;

  auto split_heads = [&](const Var<Real>& t) {
    return reshape(permute(reshape(t, {b, s, h, dh}), {0, 2, 1, 3}), {b * h, s, dh});
  };
  Var<Real> q = split_heads(linear(x, p.q_w, &p.q_b));
  Var<Real> k = split_heads(linear(x, p.k_w));
  Var<Real> v = split_heads(linear(x, p.v_w, &p.v_b));

  Var<Real> logits = scale(matmul(q, k, true), Real(1) / std::sqrt(static_cast<Real>(dh)));
  std::optional<Mask> head_mask;
  const Mask* use_mask = nullptr;
  if (mask) {
    if (mask->rank() == 3 && h > 1) {
      if (mask->dim(0) != b || mask->dim(1) != s || mask->dim(2) != s) {
        throw ValidationError("multi_head_attention: mask " + shape_str(mask->shape()) +
                              " does not match batch " + shape_str(x.shape()));
      }
      head_mask = repeat_mask_per_head(*mask, h);
      use_mask = &*head_mask;
    } else {
      use_mask = mask;
    }
  }
  Var<Real> weights = softmax_lastdim(logits, use_mask);
  if (trace) trace->weights = weights.value();
  Var<Real> ctx = matmul(weights, v);  // [B*h, S, dh]
  ctx = reshape(permute(reshape(ctx, {b, h, s, dh}), {0, 2, 1, 3}), {b, s, d});
  return linear(ctx, p.o_w, &p.o_b);
}

template <typename Real>
Var<Real> encoder_layer(const Var<Real>& x, const EncoderLayerParams<Real>& p,
                        const Mask* mask = nullptr) {
  Var<Real> y = layer_norm(add(x, multi_head_attention(x, p.attn, mask)), p.norm_gain,
                           p.norm_bias);
  if (p.has_ffn) {
    Var<Real> ff = linear(gelu(linear(y, p.ffn1_w, &p.ffn1_b)), p.ffn2_w, &p.ffn2_b);
    y = layer_norm(add(y, ff), p.ffn_norm_gain, p.ffn_norm_bias);
  }
  return y;
}

template <typename Real>
Var<Real> encoder_stack(Var<Real> x, const std::vector<EncoderLayerParams<Real>>& layers,
                        const Mask* mask = nullptr) {
  for (const auto& layer : layers) x = encoder_layer(x, layer, mask);
  return x;
}

/// Per-variate temporal encoding of H [M, P, D]. Rows never mix; `patch_valid`
/// [M, P] hides left-padding patches from real queries.
template <typename Real>
Var<Real> time_encoder_forward(const Var<Real>& h,
                               const std::vector<EncoderLayerParams<Real>>& layers,
                               const Mask* patch_valid = nullptr) {
  if (layers.empty()) return h;
  if (!patch_valid) return encoder_stack(h, layers);
  const Mask mask = attention_mask_from_valid(*patch_valid);
  return encoder_stack(h, layers, &mask);
}

}  // namespace xvariate
