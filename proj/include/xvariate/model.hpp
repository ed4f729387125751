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

// End-to-end network: residual patch embedding, per-variate time attention,
// prototype diff-attention, latent entity attention, variate reassembly
// routing with gated fusion, and the quantile head.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xvariate/attention.hpp"
#include "xvariate/autodiff.hpp"
#include "xvariate/config.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/forecast_head.hpp"
#include "xvariate/params.hpp"
#include "xvariate/preprocess.hpp"
#include "xvariate/variate_attention.hpp"

namespace xvariate {

struct ParamSpec {
  enum class Init { kNormal, kZeros, kOnes, kConstant };
  std::string name;
  Shape shape;
  Init init = Init::kZeros;
  double value = 0.0;  // std for kNormal, fill for kConstant
};

/// Every learnable tensor the config implies, in a stable order.
inline std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  validate(cfg);
  using Init = ParamSpec::Init;
  const std::size_t d = cfg.d_model;
  const std::size_t in = 3 * cfg.patch_len;
  const std::size_t c = cfg.prototypes;
  const std::size_t out = cfg.patch_len * cfg.quantiles.size();
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<ParamSpec> specs;
  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    specs.push_back({name, Shape{rows, cols}, Init::kNormal,
                     1.0 / std::sqrt(static_cast<double>(cols))});
  };
  auto zeros = [&](const std::string& name, std::size_t n) {
    specs.push_back({name, Shape{n}, Init::kZeros, 0.0});
  };
  auto ones = [&](const std::string& name, std::size_t n) {
    specs.push_back({name, Shape{n}, Init::kOnes, 0.0});
  };
  auto encoder = [&](const std::string& prefix) {
    weight(prefix + ".attn.q.weight", d, d);
    zeros(prefix + ".attn.q.bias", d);
    weight(prefix + ".attn.k.weight", d, d);
    weight(prefix + ".attn.v.weight", d, d);
    zeros(prefix + ".attn.v.bias", d);
    weight(prefix + ".attn.o.weight", d, d);
    zeros(prefix + ".attn.o.bias", d);
    ones(prefix + ".norm.gain", d);
    zeros(prefix + ".norm.bias", d);
    if (cfg.ffn) {
      weight(prefix + ".ffn.fc1.weight", 4 * d, d);
      zeros(prefix + ".ffn.fc1.bias", 4 * d);
      weight(prefix + ".ffn.fc2.weight", d, 4 * d);
      zeros(prefix + ".ffn.fc2.bias", d);
      ones(prefix + ".ffn_norm.gain", d);
      zeros(prefix + ".ffn_norm.bias", d);
    }
  };
  weight("embed.linear.weight", d, in);
  zeros("embed.linear.bias", d);
  weight("embed.mlp.fc1.weight", d, in);
  zeros("embed.mlp.fc1.bias", d);
  weight("embed.mlp.fc2.weight", d, d);
  zeros("embed.mlp.fc2.bias", d);
  for (std::size_t i = 0; i < cfg.time_layers; ++i) encoder("time." + std::to_string(i));
  specs.push_back({"upda.k_pos", Shape{c, d}, Init::kNormal, sd});
  specs.push_back({"upda.k_neg", Shape{c, d}, Init::kNormal, sd});
  specs.push_back({"upda.lambda", Shape{1}, Init::kConstant, cfg.lambda_init});
  weight("upda.query.weight", d, d);
  zeros("upda.query.bias", d);
  weight("upda.value.weight", d, d);
  zeros("upda.value.bias", d);
  for (std::size_t i = 0; i < cfg.entity_layers; ++i) encoder("lea." + std::to_string(i));
  weight("router.request.weight", d, d);
  zeros("router.request.bias", d);
  weight("router.index.weight", d, d);
  weight("router.context.weight", d, d);
  zeros("router.context.bias", d);
  weight("gate.weight", d, d);
  zeros("gate.bias", d);
  weight("head.weight", out, d);
  zeros("head.bias", out);
  return specs;
}

template <typename Real = double>
class Model {
 public:
  struct Trace {
    Tensor<Real> h_t;          // [M, P, D]
    Tensor<Real> h_c;          // [P, N*C, D]
    Tensor<Real> h_c_refined;  // [P, N*C, D]
    Tensor<Real> h_v;          // [M, P, D]
    Tensor<Real> h_hat;        // [M, P, D]
    UpdaTrace<Real> upda;
    RouterTrace<Real> router;
  };

  /// Fresh initialization from a seed.
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    std::mt19937_64 rng(seed);
    for (const auto& spec : parameter_specs(cfg_)) {
      Tensor<Real> t(spec.shape);
      switch (spec.init) {
        case ParamSpec::Init::kNormal: {
          std::normal_distribution<double> dist(0.0, spec.value);
          for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
          break;
        }
        case ParamSpec::Init::kOnes:
          t.fill(Real(1));
          break;
        case ParamSpec::Init::kConstant:
          t.fill(static_cast<Real>(spec.value));
          break;
        case ParamSpec::Init::kZeros:
          break;
      }
      params_.add(spec.name, std::move(t));
    }
    bind();
  }

  /// Adopts existing parameters; names and shapes must match the config.
  Model(const ModelConfig& cfg, ParamStore<Real> params)
      : cfg_(cfg), params_(std::move(params)) {
    const auto specs = parameter_specs(cfg_);
    if (specs.size() != params_.size()) {
      throw ValidationError("model expects " + std::to_string(specs.size()) +
                            " parameter tensors, got " + std::to_string(params_.size()));
    }
    for (const auto& spec : specs) {
      if (!params_.contains(spec.name)) {
        throw ValidationError("missing parameter " + spec.name);
      }
      if (params_.get(spec.name).shape() != spec.shape) {
        throw ValidationError("parameter " + spec.name + " has shape " +
                              shape_str(params_.get(spec.name).shape()) + ", expected " +
                              shape_str(spec.shape));
      }
    }
    bind();
  }

  Model(const Model& other) : Model(other.cfg_, other.params_.clone()) {}
  Model& operator=(const Model& other) {
    if (this != &other) {
      cfg_ = other.cfg_;
      params_ = other.params_.clone();
      bind();
    }
    return *this;
  }
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const ParamStore<Real>& params() const { return params_; }
  const PrototypeBank<Real>& bank() const { return upda_.bank; }

  template <typename Other>
  Model<Other> cast() const {
    return Model<Other>(cfg_, params_.template cast<Other>());
  }

  /// Normalized quantile predictions [M, T_max, |Q|].
  Var<Real> forward(const PreparedBatch<Real>& batch, Trace* trace = nullptr) const {
    if (batch.patch_len != cfg_.patch_len) {
      throw ValidationError("batch patch length " + std::to_string(batch.patch_len) +
                            " differs from model patch length " +
                            std::to_string(cfg_.patch_len));
    }
    const std::size_t m = batch.rows();
    const std::size_t p_count = batch.patches();
    const auto owner = batch.layout.row_entity();
    bool any_pad = false;
    Mask patch_valid(Shape{m, p_count}, 1);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t pad = batch.layout.entities[owner[r]].pad_patches;
      for (std::size_t p = 0; p < std::min(pad, p_count); ++p) {
        patch_valid[r * p_count + p] = 0;
        any_pad = true;
      }
    }

    Var<Real> features = constant(patch_features(batch));
    Var<Real> h = res_patch_embed(features, embed_);
    Var<Real> h_t = time_encoder_forward(h, time_, any_pad ? &patch_valid : nullptr);
    Var<Real> h_c = upda_forward(h_t, batch.layout, upda_, trace ? &trace->upda : nullptr);
    const Mask token_valid =
        prototype_token_valid(batch.layout, p_count, cfg_.prototypes);
    Var<Real> h_c2 = lea_forward(h_c, lea_, any_pad ? &token_valid : nullptr);
    Var<Real> h_v =
        vrr_route(h_t, h_c2, batch.layout, router_, trace ? &trace->router : nullptr);
    Var<Real> h_hat = gated_fuse(h_t, h_v, gate_);
    if (trace) {
      trace->h_t = h_t.value();
      trace->h_c = h_c.value();
      trace->h_c_refined = h_c2.value();
      trace->h_v = h_v.value();
      trace->h_hat = h_hat.value();
    }
    return quantile_head(h_hat, batch.horizon_patches(), head_, cfg_.patch_len,
                         cfg_.quantiles.size());
  }

  LossTerms<Real> loss(const PreparedBatch<Real>& batch, double alpha,
                       Trace* trace = nullptr) const {
    Var<Real> pred = forward(batch, trace);
    return total_loss(pred, batch.target, batch.target_valid, cfg_.quantiles, upda_.bank,
                      alpha);
  }

 private:
  EncoderLayerParams<Real> encoder_params(const std::string& prefix) const {
    EncoderLayerParams<Real> p;
    p.attn.heads = cfg_.heads;
    p.attn.q_w = params_.get(prefix + ".attn.q.weight");
    p.attn.q_b = params_.get(prefix + ".attn.q.bias");
    p.attn.k_w = params_.get(prefix + ".attn.k.weight");
    p.attn.v_w = params_.get(prefix + ".attn.v.weight");
    p.attn.v_b = params_.get(prefix + ".attn.v.bias");
    p.attn.o_w = params_.get(prefix + ".attn.o.weight");
    p.attn.o_b = params_.get(prefix + ".attn.o.bias");
    p.norm_gain = params_.get(prefix + ".norm.gain");
    p.norm_bias = params_.get(prefix + ".norm.bias");
    p.has_ffn = cfg_.ffn;
    if (cfg_.ffn) {
      p.ffn1_w = params_.get(prefix + ".ffn.fc1.weight");
      p.ffn1_b = params_.get(prefix + ".ffn.fc1.bias");
      p.ffn2_w = params_.get(prefix + ".ffn.fc2.weight");
      p.ffn2_b = params_.get(prefix + ".ffn.fc2.bias");
      p.ffn_norm_gain = params_.get(prefix + ".ffn_norm.gain");
      p.ffn_norm_bias = params_.get(prefix + ".ffn_norm.bias");
    }
    return p;
  }

  void bind() {
    embed_ = {params_.get("embed.linear.weight"), params_.get("embed.linear.bias"),
              params_.get("embed.mlp.fc1.weight"), params_.get("embed.mlp.fc1.bias"),
              params_.get("embed.mlp.fc2.weight"), params_.get("embed.mlp.fc2.bias")};
    time_.clear();
    for (std::size_t i = 0; i < cfg_.time_layers; ++i) {
      time_.push_back(encoder_params("time." + std::to_string(i)));
    }
    upda_.bank = {params_.get("upda.k_pos"), params_.get("upda.k_neg"),
                  params_.get("upda.lambda")};
    upda_.q_w = params_.get("upda.query.weight");
    upda_.q_b = params_.get("upda.query.bias");
    upda_.v_w = params_.get("upda.value.weight");
    upda_.v_b = params_.get("upda.value.bias");
    lea_.clear();
    for (std::size_t i = 0; i < cfg_.entity_layers; ++i) {
      lea_.push_back(encoder_params("lea." + std::to_string(i)));
    }
    router_ = {params_.get("router.request.weight"), params_.get("router.request.bias"),
               params_.get("router.index.weight"), params_.get("router.context.weight"),
               params_.get("router.context.bias")};
    gate_ = {params_.get("gate.weight"), params_.get("gate.bias")};
    head_ = {params_.get("head.weight"), params_.get("head.bias")};
  }

  ModelConfig cfg_;
  ParamStore<Real> params_;
  PatchEmbedParams<Real> embed_;
  std::vector<EncoderLayerParams<Real>> time_;
  UpdaParams<Real> upda_;
  std::vector<EncoderLayerParams<Real>> lea_;
  RouterParams<Real> router_;
  GateParams<Real> gate_;
  HeadParams<Real> head_;
};

inline std::size_t round_up(std::size_t n, std::size_t multiple) {
  return (n + multiple - 1) / multiple * multiple;
}

/// Forecasts `horizon` steps for each window in one forward pass and maps the
/// sorted quantiles back to physical scale. Entities in the same call can
/// interact through the latent entity attention; call once per entity to
/// keep them isolated.
template <typename Real>
QuantileForecast forecast_windows(const Model<Real>& model, std::span<const SeriesWindow> windows,
                                  std::size_t horizon) {
  if (windows.empty()) throw ValidationError("forecast: no windows");
  if (horizon == 0) throw ValidationError("forecast: horizon must be positive");
  const std::size_t lp = model.config().patch_len;
  const std::size_t horizon_grid = round_up(horizon, lp);
  std::size_t context = 0;
  std::vector<SeriesWindow> padded(windows.begin(), windows.end());
  for (auto& w : padded) {
    w.horizon = horizon_grid;
    w.future.clear();
    context = std::max(context, w.context());
  }
  context = round_up(context, lp);
  NoGradGuard no_grad;
  const auto batch = prepare_batch<Real>(padded, context, horizon_grid, lp,
                                         model.config().norm_mode);
  Tensor<Real> pred = model.forward(batch).value();
  sort_quantiles(pred);
  const Tensor<Real> phys = denormalize_forecast(pred, batch.stats, model.config().norm_mode);
  const std::size_t m = batch.rows();
  const std::size_t nq = model.config().quantiles.size();
  QuantileForecast out;
  out.quantiles = model.config().quantiles;
  out.values = Tensor<double>(Shape{m, horizon, nq});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t t = 0; t < horizon; ++t) {
      for (std::size_t k = 0; k < nq; ++k) {
        out.values[(r * horizon + t) * nq + k] =
            static_cast<double>(phys[(r * horizon_grid + t) * nq + k]);
      }
    }
  }
  for (const auto& w : windows) {
    for (std::size_t v = 0; v < w.variates(); ++v) {
      out.entity_ids.push_back(w.entity_id);
      out.variate_index.push_back(v);
    }
  }
  return out;
}

}  // namespace xvariate
