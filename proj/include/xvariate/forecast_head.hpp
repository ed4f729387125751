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

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "xvariate/autodiff.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/tensor.hpp"
#include "xvariate/variate_attention.hpp"

namespace xvariate {

inline void validate_quantiles(const std::vector<double>& q) {
  if (q.empty()) throw ValidationError("quantile set is empty");
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!(q[i] > 0.0 && q[i] < 1.0)) {
      throw ValidationError("quantile " + std::to_string(q[i]) + " outside (0,1)");
    }
    if (i > 0 && !(q[i] > q[i - 1])) {
      throw ValidationError("quantiles must be strictly increasing");
    }
  }
}

template <typename Real>
struct HeadParams {
  Var<Real> w;  // [L_p * |Q|, D]
  Var<Real> b;  // [L_p * |Q|]
};

/// Takes the last `horizon_patches` patch embeddings of every row and
/// projects each to L_p * |Q| values: [M, P, D] -> [M, F * L_p, |Q|].
template <typename Real>
Var<Real> quantile_head(const Var<Real>& h, std::size_t horizon_patches,
                        const HeadParams<Real>& p, std::size_t patch_len,
                        std::size_t quantile_count) {
  const std::size_t m = h.shape()[0];
  const std::size_t p_count = h.shape()[1];
  if (horizon_patches == 0 || horizon_patches > p_count) {
    throw ValidationError("quantile_head: " + std::to_string(horizon_patches) +
                          " horizon patches requested from " + std::to_string(p_count));
  }
  if (p.w.shape()[0] != patch_len * quantile_count) {
    throw ValidationError("quantile_head: weight " + shape_str(p.w.shape()) +
                          " does not emit patch_len * |Q| values");
  }
  Var<Real> future = slice(h, 1, p_count - horizon_patches, p_count);
  Var<Real> proj = linear(future, p.w, &p.b);
  return reshape(proj, {m, horizon_patches * patch_len, quantile_count});
}

/// Mean pinball loss over valid (row, step) cells and all quantiles.
/// Invalid cells contribute to neither numerator nor denominator.
template <typename Real>
Var<Real> quantile_loss(const Var<Real>& pred, const Tensor<Real>& target,
                        const Tensor<Real>& valid, const std::vector<double>& quantiles) {
  const std::size_t nq = quantiles.size();
  if (pred.shape().size() != 3 || pred.shape()[2] != nq ||
      Shape{pred.shape()[0], pred.shape()[1]} != target.shape() ||
      target.shape() != valid.shape()) {
    throw ValidationError("quantile_loss: prediction " + shape_str(pred.shape()) +
                          ", target " + shape_str(target.shape()) + ", mask " +
                          shape_str(valid.shape()) + ", |Q|=" + std::to_string(nq));
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < valid.size(); ++i) count += valid[i] != Real(0);
  if (count == 0) throw ValidationError("quantile_loss: no valid target cells");
  const Real inv = Real(1) / static_cast<Real>(count * nq);
  Real total = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (valid[i] == Real(0)) continue;
    for (std::size_t k = 0; k < nq; ++k) {
      const Real q = static_cast<Real>(quantiles[k]);
      const Real e = target[i] - pred.value()[i * nq + k];
      total += std::max(q * e, (q - Real(1)) * e);
    }
  }
  return make_result<Real>(
      Tensor<Real>::scalar(total * inv), {pred},
      [pred, target, valid, quantiles, inv, nq](const Tensor<Real>& g, const Tensor<Real>&) {
        auto& gp = pred.grad_buffer();
        for (std::size_t i = 0; i < target.size(); ++i) {
          if (valid[i] == Real(0)) continue;
          for (std::size_t k = 0; k < nq; ++k) {
            const Real q = static_cast<Real>(quantiles[k]);
            const Real e = target[i] - pred.value()[i * nq + k];
            // d/dpred of max(q e, (q-1) e); at e == 0 the subgradient (q - 1/2) is not used
            const Real slope = e > 0 ? -q : (e < 0 ? Real(1) - q : Real(0));
            gp[i * nq + k] += g[0] * inv * slope;
          }
        }
      });
}

template <typename Real>
struct LossTerms {
  Var<Real> total;
  double prediction = 0.0;
  double orthogonality = 0.0;
};

/// L_pred + alpha * L_orth.
template <typename Real>
LossTerms<Real> total_loss(const Var<Real>& pred, const Tensor<Real>& target,
                           const Tensor<Real>& valid, const std::vector<double>& quantiles,
                           const PrototypeBank<Real>& bank, double alpha) {
  if (alpha < 0) throw ValidationError("total_loss: alpha must be >= 0");
  LossTerms<Real> out;
  Var<Real> pred_loss = quantile_loss(pred, target, valid, quantiles);
  Var<Real> orth = orthogonality_loss(bank.k_pos, bank.k_neg);
  out.prediction = static_cast<double>(pred_loss.item());
  out.orthogonality = static_cast<double>(orth.item());
  out.total = alpha == 0.0 ? pred_loss : add(pred_loss, scale(orth, static_cast<Real>(alpha)));
  return out;
}

/// Sorts the quantile axis of [M, T, |Q|] in place (non-crossing repair).
template <typename Real>
void sort_quantiles(Tensor<Real>& pred) {
  const std::size_t nq = pred.dim(-1);
  for (std::size_t i = 0; i + nq <= pred.size(); i += nq) {
    std::sort(pred.data() + i, pred.data() + i + nq);
  }
}

/// Physical-scale predictions [M, T, |Q|] with their quantile levels.
struct QuantileForecast {
  Tensor<double> values;
  std::vector<double> quantiles;
  std::vector<std::string> entity_ids;    // per row
  std::vector<std::size_t> variate_index; // per row, index within the entity
};

}  // namespace xvariate
