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

// Synthetic series: random Gaussian-process kernel compositions, and
// multivariatizers that impose cross-variate structure on base series.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "xvariate/errors.hpp"
#include "xvariate/preprocess.hpp"

namespace xvariate {

struct KernelSpec {
  enum class Kind { kLinear, kSquaredExp, kPeriodic, kWhiteNoise, kSum, kProduct };

  Kind kind = Kind::kSquaredExp;
  double variance = 1.0;
  double length_scale = 1.0;  // squared-exponential and periodic
  double period = 1.0;        // periodic
  double offset = 0.0;        // linear
  std::vector<KernelSpec> children;  // sum and product

  static KernelSpec linear(double variance, double offset) {
    KernelSpec k;
    k.kind = Kind::kLinear;
    k.variance = variance;
    k.offset = offset;
    return k;
  }
  static KernelSpec squared_exp(double variance, double length_scale) {
    KernelSpec k;
    k.kind = Kind::kSquaredExp;
    k.variance = variance;
    k.length_scale = length_scale;
    return k;
  }
  static KernelSpec periodic(double variance, double length_scale, double period) {
    KernelSpec k;
    k.kind = Kind::kPeriodic;
    k.variance = variance;
    k.length_scale = length_scale;
    k.period = period;
    return k;
  }
  static KernelSpec white(double variance) {
    KernelSpec k;
    k.kind = Kind::kWhiteNoise;
    k.variance = variance;
    return k;
  }
  static KernelSpec combine(Kind op, KernelSpec a, KernelSpec b) {
    KernelSpec k;
    k.kind = op;
    k.children = {std::move(a), std::move(b)};
    return k;
  }

  /// k(t1, t2) on the integer grid. The linear kernel works on t/scale so
  /// its magnitude does not grow with series length.
  double operator()(double t1, double t2, double scale = 1.0) const {
    switch (kind) {
      case Kind::kLinear:
        return variance * (t1 / scale - offset) * (t2 / scale - offset);
      case Kind::kSquaredExp: {
        const double d = (t1 - t2) / length_scale;
        return variance * std::exp(-0.5 * d * d);
      }
      case Kind::kPeriodic: {
        const double s = std::sin(std::numbers::pi * std::abs(t1 - t2) / period) / length_scale;
        return variance * std::exp(-2.0 * s * s);
      }
      case Kind::kWhiteNoise:
        return t1 == t2 ? variance : 0.0;
      case Kind::kSum:
        return children[0](t1, t2, scale) + children[1](t1, t2, scale);
      case Kind::kProduct:
        return children[0](t1, t2, scale) * children[1](t1, t2, scale);
    }
    return 0.0;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(4);
    switch (kind) {
      case Kind::kLinear: os << "lin(v=" << variance << ",c=" << offset << ")"; break;
      case Kind::kSquaredExp: os << "se(v=" << variance << ",l=" << length_scale << ")"; break;
      case Kind::kPeriodic:
        os << "per(v=" << variance << ",l=" << length_scale << ",p=" << period << ")";
        break;
      case Kind::kWhiteNoise: os << "white(v=" << variance << ")"; break;
      case Kind::kSum:
        os << "(" << children[0].describe() << " + " << children[1].describe() << ")";
        break;
      case Kind::kProduct:
        os << "(" << children[0].describe() << " * " << children[1].describe() << ")";
        break;
    }
    return os.str();
  }
};

inline Eigen::MatrixXd gram_matrix(const KernelSpec& k, std::size_t n) {
  const auto size = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd g(size, size);
  const double scale = static_cast<double>(std::max<std::size_t>(n, 1));
  for (Eigen::Index i = 0; i < size; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      g(i, j) = g(j, i) = k(static_cast<double>(i), static_cast<double>(j), scale);
    }
  }
  return g;
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline constexpr double kGramPsdTolerance = 1e-8;
inline constexpr double kJitterStart = 1e-10;
inline constexpr int kJitterDoublings = 6;

/// Draws one GP path of length n. Jitter is added to the diagonal and
/// doubled until the factorization succeeds; nullopt after the last attempt.
inline std::optional<std::vector<double>> sample_gp(const KernelSpec& k, std::size_t n,
                                                    std::mt19937_64& rng) {
  const Eigen::MatrixXd g = gram_matrix(k, n);
  const double diag_scale = std::max(1.0, g.diagonal().mean());
  const auto size = static_cast<Eigen::Index>(n);
  double jitter = kJitterStart * diag_scale;
  for (int attempt = 0; attempt <= kJitterDoublings; ++attempt, jitter *= 2.0) {
    Eigen::MatrixXd a = g;
    a.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) continue;
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(size);
    for (Eigen::Index i = 0; i < size; ++i) z(i) = normal(rng);
    const Eigen::VectorXd y = llt.matrixL() * z;
    return std::vector<double>(y.data(), y.data() + y.size());
  }
  return std::nullopt;
}

struct KernelBankOptions {
  std::size_t max_components = 5;
  double min_length_scale = 2.0;   // squared-exponential, in steps
  double max_length_scale = 64.0;
  std::vector<double> periods = {4, 6, 7, 12, 24, 30, 48};
};

inline KernelSpec random_base_kernel(std::mt19937_64& rng, std::size_t n,
                                     const KernelBankOptions& opt) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
      return KernelSpec::linear(0.1 + 0.9 * unit(rng), unit(rng));
    case 1: {
      const double hi = std::max(opt.min_length_scale,
                                 std::min(opt.max_length_scale, static_cast<double>(n) / 4.0));
      const double ls = std::exp(std::log(opt.min_length_scale) +
                                 unit(rng) * (std::log(hi) - std::log(opt.min_length_scale)));
      return KernelSpec::squared_exp(1.0, ls);
    }
    case 2: {
      std::vector<double> ok;
      for (double p : opt.periods) {
        if (p * 2.0 <= static_cast<double>(n)) ok.push_back(p);
      }
      if (ok.empty()) ok.push_back(std::max(2.0, static_cast<double>(n) / 2.0));
      const double p = ok[std::uniform_int_distribution<std::size_t>(0, ok.size() - 1)(rng)];
      return KernelSpec::periodic(1.0, 0.5 + 1.5 * unit(rng), p);
    }
    default:
      return KernelSpec::white(0.01 + 0.09 * unit(rng));
  }
}

/// Composes 1..max_components bank kernels with randomly chosen + or *.
inline KernelSpec random_kernel(std::mt19937_64& rng, std::size_t n,
                                const KernelBankOptions& opt = {}) {
  if (opt.max_components == 0) throw ValidationError("max_components must be >= 1");
  const std::size_t count =
      std::uniform_int_distribution<std::size_t>(1, opt.max_components)(rng);
  KernelSpec k = random_base_kernel(rng, n, opt);
  for (std::size_t i = 1; i < count; ++i) {
    const auto op = std::bernoulli_distribution(0.5)(rng) ? KernelSpec::Kind::kSum
                                                          : KernelSpec::Kind::kProduct;
    k = KernelSpec::combine(op, std::move(k), random_base_kernel(rng, n, opt));
  }
  return k;
}

/// Draws a kernel and a path; redraws the kernel when factorization fails.
inline std::vector<double> kernel_synth(std::mt19937_64& rng, std::size_t n,
                                        const KernelBankOptions& opt = {},
                                        KernelSpec* used = nullptr) {
  constexpr int kMaxRedraws = 100;
  for (int i = 0; i < kMaxRedraws; ++i) {
    KernelSpec k = random_kernel(rng, n, opt);
    if (auto y = sample_gp(k, n, rng)) {
      if (used) *used = std::move(k);
      return *y;
    }
  }
  throw NumericError("kernel_synth: no factorizable kernel after 100 draws");
}

/// Zero mean, unit population std (left as-is when constant).
inline std::vector<double> standardize(std::vector<double> y) {
  if (y.empty()) return y;
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(y.size()));
  for (double& v : y) v = sd > 0.0 ? (v - mean) / sd : v - mean;
  return y;
}

/// Convex combination sum_i w_i * s_i. Weights must be non-negative and sum
/// to one.
inline std::vector<double> mix_series(const std::vector<std::vector<double>>& series,
                                      const std::vector<double>& weights) {
  if (series.empty() || series.size() != weights.size()) {
    throw ValidationError("mix_series: need one weight per series");
  }
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ValidationError("mix_series: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("mix_series: weights must sum to 1");
  std::vector<double> out(series.front().size(), 0.0);
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].size() != out.size()) throw ValidationError("mix_series: length mismatch");
    for (std::size_t t = 0; t < out.size(); ++t) out[t] += weights[i] * series[i][t];
  }
  return out;
}

enum class Nonlinearity { kIdentity, kTanh };

/// y_j(t) = phi(sum_k W[j][k] x_k(t)).
inline std::vector<std::vector<double>> cotemporaneous(
    const std::vector<std::vector<double>>& bases, const std::vector<std::vector<double>>& w,
    Nonlinearity phi) {
  if (bases.empty()) throw ValidationError("cotemporaneous: no base series");
  const std::size_t n = bases.front().size();
  std::vector<std::vector<double>> out;
  for (const auto& row : w) {
    if (row.size() != bases.size()) throw ValidationError("cotemporaneous: W shape mismatch");
    std::vector<double> y(n, 0.0);
    for (std::size_t k = 0; k < bases.size(); ++k) {
      for (std::size_t t = 0; t < n; ++t) y[t] += row[k] * bases[k][t];
    }
    if (phi == Nonlinearity::kTanh) {
      for (double& v : y) v = std::tanh(v);
    }
    out.push_back(std::move(y));
  }
  return out;
}

/// Variate 0 is the base; variate 1 repeats it `lag` steps later (the first
/// `lag` steps hold the base's first value) plus Gaussian noise.
inline std::vector<std::vector<double>> lead_lag(const std::vector<double>& base,
                                                 std::size_t lag, double noise_std,
                                                 std::mt19937_64& rng) {
  if (base.empty()) throw ValidationError("lead_lag: empty base");
  std::normal_distribution<double> noise(0.0, noise_std);
  std::vector<double> follower(base.size());
  for (std::size_t t = 0; t < base.size(); ++t) {
    follower[t] = (t >= lag ? base[t - lag] : base.front()) + (noise_std > 0 ? noise(rng) : 0.0);
  }
  return {base, std::move(follower)};
}

/// Variate 1 = base + a stationary AR(1) spread with coefficient `reversion`.
inline std::vector<std::vector<double>> cointegrated(const std::vector<double>& base,
                                                     double reversion, double noise_std,
                                                     std::mt19937_64& rng) {
  if (!(reversion > 0.0 && reversion < 1.0)) {
    throw ValidationError("cointegrated: reversion must be in (0, 1)");
  }
  std::normal_distribution<double> noise(0.0, noise_std);
  std::vector<double> other(base.size());
  double spread = 0.0;
  for (std::size_t t = 0; t < base.size(); ++t) {
    spread = reversion * spread + noise(rng);
    other[t] = base[t] + spread;
  }
  return {base, std::move(other)};
}

/// Deterministic per-entity seed from the corpus seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct CorpusSpec {
  std::size_t kernel_entities = 0;          // univariate kernel-synth
  std::size_t cotemporaneous_entities = 0;
  std::size_t lead_lag_entities = 0;
  std::size_t cointegrated_entities = 0;
  std::size_t length = 256;
  std::size_t cotemporaneous_bases = 2;
  std::size_t cotemporaneous_variates = 2;
  Nonlinearity nonlinearity = Nonlinearity::kTanh;
  std::size_t lag_min = 1;
  std::size_t lag_max = 8;
  double noise_std = 0.02;
  double reversion = 0.9;
  std::string frequency = "H";
  KernelBankOptions kernels;

  std::size_t entities() const {
    return kernel_entities + cotemporaneous_entities + lead_lag_entities + cointegrated_entities;
  }
};

struct GeneratedEntity {
  EntitySeries series;
  std::map<std::string, std::string> generator;  // recorded in the manifest
};

/// Generates every entity from its own derived seed, so entity i does not
/// depend on the random draws of the entities before it.
inline std::vector<GeneratedEntity> generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  if (spec.length < 2) throw ValidationError("corpus length must be >= 2");
  if (spec.lag_min > spec.lag_max || spec.lag_max >= spec.length) {
    throw ValidationError("corpus lag range invalid");
  }
  std::vector<GeneratedEntity> out;
  std::size_t index = 0;
  auto base = [&](std::mt19937_64& rng, std::string& desc) {
    KernelSpec k;
    auto y = standardize(kernel_synth(rng, spec.length, spec.kernels, &k));
    if (!desc.empty()) desc += "; ";
    desc += k.describe();
    return y;
  };
  auto emit = [&](const std::string& kind, std::vector<std::vector<double>> values,
                  std::map<std::string, std::string> meta) {
    GeneratedEntity e;
    char id[32];
    std::snprintf(id, sizeof id, "e%05zu", index);
    e.series.id = id;
    e.series.values = std::move(values);
    e.series.frequency = spec.frequency;
    meta["kind"] = kind;
    e.generator = std::move(meta);
    out.push_back(std::move(e));
  };
  for (std::size_t i = 0; i < spec.kernel_entities; ++i, ++index) {
    std::mt19937_64 rng(derive_seed(seed, index));
    std::string desc;
    auto y = base(rng, desc);
    emit("kernel", {std::move(y)}, {{"kernel", desc}});
  }
  for (std::size_t i = 0; i < spec.cotemporaneous_entities; ++i, ++index) {
    std::mt19937_64 rng(derive_seed(seed, index));
    std::string desc;
    std::vector<std::vector<double>> bases;
    for (std::size_t b = 0; b < spec.cotemporaneous_bases; ++b) bases.push_back(base(rng, desc));
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> w(spec.cotemporaneous_variates,
                                       std::vector<double>(bases.size()));
    for (auto& row : w) {
      for (double& v : row) v = normal(rng);
    }
    emit("cotemporaneous", cotemporaneous(bases, w, spec.nonlinearity),
         {{"kernel", desc},
          {"nonlinearity", spec.nonlinearity == Nonlinearity::kTanh ? "tanh" : "identity"}});
  }
  for (std::size_t i = 0; i < spec.lead_lag_entities; ++i, ++index) {
    std::mt19937_64 rng(derive_seed(seed, index));
    std::string desc;
    auto y = base(rng, desc);
    const std::size_t lag =
        std::uniform_int_distribution<std::size_t>(spec.lag_min, spec.lag_max)(rng);
    emit("lead_lag", lead_lag(y, lag, spec.noise_std, rng),
         {{"kernel", desc}, {"lag", std::to_string(lag)}});
  }
  for (std::size_t i = 0; i < spec.cointegrated_entities; ++i, ++index) {
    std::mt19937_64 rng(derive_seed(seed, index));
    std::string desc;
    auto y = base(rng, desc);
    emit("cointegrated", cointegrated(y, spec.reversion, spec.noise_std, rng),
         {{"kernel", desc}, {"reversion", std::to_string(spec.reversion)}});
  }
  return out;
}

inline std::vector<EntitySeries> series_of(const std::vector<GeneratedEntity>& corpus) {
  std::vector<EntitySeries> out;
  out.reserve(corpus.size());
  for (const auto& e : corpus) out.push_back(e.series);
  return out;
}

}  // namespace xvariate
