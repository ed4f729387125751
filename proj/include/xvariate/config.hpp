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

// Flat `key = value` configuration. Every tunable the pipeline exposes lives
// here so that it can be switched without recompiling. Serialization uses a
// fixed key order and round-trips exactly (doubles printed with 17
// significant digits).

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xvariate/errors.hpp"

namespace xvariate {

enum class NormMode { kAsinh, kArcsin };
enum class Curriculum { kJoint, kTwoStage };

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t patch_len = 16;
  std::size_t time_layers = 2;
  std::size_t entity_layers = 2;
  std::size_t heads = 2;
  std::size_t prototypes = 4;
  bool ffn = false;
  double lambda_init = 0.5;
  std::vector<double> quantiles = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  NormMode norm_mode = NormMode::kAsinh;

  bool operator==(const ModelConfig&) const = default;
};

struct SamplerConfig {
  std::size_t min_context = 32;
  std::size_t context_cap = 512;
  std::size_t max_horizon = 64;
  std::size_t max_variates = 8;
  std::size_t variate_budget = 64;
  // Probability that a training sample is reduced to one random variate.
  double univariate_fraction = 0.0;

  bool operator==(const SamplerConfig&) const = default;
};

struct ScheduleConfig {
  double peak_lr = 6e-5;
  double final_lr = 6e-6;
  double warmup_fraction = 0.001;
  std::size_t total_steps = 2000;

  bool operator==(const ScheduleConfig&) const = default;
};

struct TrainConfig {
  double alpha = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t checkpoint_every = 500;
  Curriculum curriculum = Curriculum::kJoint;
  // Share of steps in the univariate-only warm phase of the two-stage run.
  double stage_one_fraction = 0.5;
  std::vector<std::string> frozen;

  bool operator==(const TrainConfig&) const = default;
};

struct Config {
  ModelConfig model;
  SamplerConfig sampler;
  ScheduleConfig schedule;
  TrainConfig train;

  bool operator==(const Config&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' expects a non-negative integer, got '" +
                          v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// One accessor pair per key, in canonical order.
struct ConfigKey {
  std::string name;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
  auto size_key = [](std::string name, auto member_ptr_getter) {
    return ConfigKey{
        name,
        [member_ptr_getter](const Config& c) {
          return std::to_string(*member_ptr_getter(const_cast<Config&>(c)));
        },
        [member_ptr_getter, name](Config& c, const std::string& v) {
          *member_ptr_getter(c) = parse_size(name, v);
        }};
  };
  auto double_key = [](std::string name, auto member_ptr_getter) {
    return ConfigKey{
        name,
        [member_ptr_getter](const Config& c) {
          return format_double(*member_ptr_getter(const_cast<Config&>(c)));
        },
        [member_ptr_getter, name](Config& c, const std::string& v) {
          *member_ptr_getter(c) = parse_double(name, v);
        }};
  };
  static const std::vector<ConfigKey> keys = {
      double_key("adam_eps", [](Config& c) { return &c.train.adam_eps; }),
      double_key("alpha", [](Config& c) { return &c.train.alpha; }),
      double_key("beta1", [](Config& c) { return &c.train.beta1; }),
      double_key("beta2", [](Config& c) { return &c.train.beta2; }),
      size_key("checkpoint_every", [](Config& c) { return &c.train.checkpoint_every; }),
      double_key("clip_norm", [](Config& c) { return &c.train.clip_norm; }),
      size_key("context_cap", [](Config& c) { return &c.sampler.context_cap; }),
      ConfigKey{"curriculum",
                [](const Config& c) {
                  return std::string(c.train.curriculum == Curriculum::kJoint ? "joint"
                                                                              : "two-stage");
                },
                [](Config& c, const std::string& v) {
                  if (v == "joint") {
                    c.train.curriculum = Curriculum::kJoint;
                  } else if (v == "two-stage") {
                    c.train.curriculum = Curriculum::kTwoStage;
                  } else {
                    throw ValidationError("config: curriculum must be joint|two-stage, got '" +
                                          v + "'");
                  }
                }},
      size_key("d_model", [](Config& c) { return &c.model.d_model; }),
      size_key("entity_layers", [](Config& c) { return &c.model.entity_layers; }),
      ConfigKey{"ffn", [](const Config& c) { return std::string(c.model.ffn ? "true" : "false"); },
                [](Config& c, const std::string& v) { c.model.ffn = parse_bool("ffn", v); }},
      double_key("final_lr", [](Config& c) { return &c.schedule.final_lr; }),
      ConfigKey{"frozen",
                [](const Config& c) {
                  std::string s;
                  for (std::size_t i = 0; i < c.train.frozen.size(); ++i) {
                    if (i) s += ",";
                    s += c.train.frozen[i];
                  }
                  return s;
                },
                [](Config& c, const std::string& v) { c.train.frozen = split(v, ','); }},
      size_key("heads", [](Config& c) { return &c.model.heads; }),
      double_key("lambda_init", [](Config& c) { return &c.model.lambda_init; }),
      size_key("max_horizon", [](Config& c) { return &c.sampler.max_horizon; }),
      size_key("max_variates", [](Config& c) { return &c.sampler.max_variates; }),
      size_key("min_context", [](Config& c) { return &c.sampler.min_context; }),
      ConfigKey{"norm_mode",
                [](const Config& c) {
                  return std::string(c.model.norm_mode == NormMode::kAsinh ? "asinh" : "arcsin");
                },
                [](Config& c, const std::string& v) {
                  if (v == "asinh") {
                    c.model.norm_mode = NormMode::kAsinh;
                  } else if (v == "arcsin") {
                    c.model.norm_mode = NormMode::kArcsin;
                  } else {
                    throw ValidationError("config: norm_mode must be asinh|arcsin, got '" + v +
                                          "'");
                  }
                }},
      size_key("patch_len", [](Config& c) { return &c.model.patch_len; }),
      double_key("peak_lr", [](Config& c) { return &c.schedule.peak_lr; }),
      size_key("prototypes", [](Config& c) { return &c.model.prototypes; }),
      ConfigKey{"quantiles",
                [](const Config& c) {
                  std::string s;
                  for (std::size_t i = 0; i < c.model.quantiles.size(); ++i) {
                    if (i) s += ",";
                    s += format_double(c.model.quantiles[i]);
                  }
                  return s;
                },
                [](Config& c, const std::string& v) {
                  c.model.quantiles.clear();
                  for (const auto& item : split(v, ',')) {
                    c.model.quantiles.push_back(parse_double("quantiles", item));
                  }
                }},
      double_key("stage_one_fraction", [](Config& c) { return &c.train.stage_one_fraction; }),
      size_key("time_layers", [](Config& c) { return &c.model.time_layers; }),
      size_key("total_steps", [](Config& c) { return &c.schedule.total_steps; }),
      double_key("univariate_fraction",
                 [](Config& c) { return &c.sampler.univariate_fraction; }),
      size_key("variate_budget", [](Config& c) { return &c.sampler.variate_budget; }),
      double_key("warmup_fraction", [](Config& c) { return &c.schedule.warmup_fraction; }),
      double_key("weight_decay", [](Config& c) { return &c.train.weight_decay; }),
  };
  return keys;
}

}  // namespace detail

inline void validate(const ModelConfig& m) {
  auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
  if (m.d_model == 0) fail("d_model must be positive");
  if (m.patch_len == 0) fail("patch_len must be positive");
  if (m.heads == 0 || m.d_model % m.heads != 0) {
    fail("d_model (" + std::to_string(m.d_model) + ") must be divisible by heads (" +
         std::to_string(m.heads) + ")");
  }
  if (m.prototypes == 0) fail("prototypes must be >= 1");
  if (m.quantiles.empty()) fail("quantile set is empty");
  for (std::size_t i = 0; i < m.quantiles.size(); ++i) {
    const double q = m.quantiles[i];
    if (!(q > 0.0 && q < 1.0)) fail("quantile " + detail::format_double(q) + " outside (0,1)");
    if (i > 0 && !(q > m.quantiles[i - 1])) fail("quantiles must be strictly increasing");
  }
}

inline void validate(const Config& c) {
  validate(c.model);
  auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
  if (c.sampler.max_variates == 0) fail("max_variates must be >= 1");
  if (c.sampler.variate_budget < c.sampler.max_variates) {
    fail("variate_budget must be >= max_variates");
  }
  if (c.sampler.max_horizon < c.model.patch_len ||
      c.sampler.max_horizon % c.model.patch_len != 0) {
    fail("max_horizon must be a positive multiple of patch_len");
  }
  if (c.sampler.min_context == 0 || c.sampler.min_context > c.sampler.context_cap) {
    fail("need 0 < min_context <= context_cap");
  }
  if (c.sampler.univariate_fraction < 0.0 || c.sampler.univariate_fraction > 1.0) {
    fail("univariate_fraction must lie in [0,1]");
  }
  if (!(c.schedule.final_lr > 0.0 && c.schedule.final_lr <= c.schedule.peak_lr)) {
    fail("need 0 < final_lr <= peak_lr");
  }
  if (!(c.schedule.warmup_fraction > 0.0 && c.schedule.warmup_fraction < 1.0)) {
    fail("warmup_fraction must lie in (0,1)");
  }
  if (c.schedule.total_steps == 0) fail("total_steps must be positive");
  if (c.train.alpha < 0.0) fail("alpha must be >= 0");
}

/// Canonical text: one `key = value` line per key, sorted by key.
inline std::string to_text(const Config& c) {
  std::string out;
  for (const auto& key : detail::config_keys()) {
    out += key.name + " = " + key.get(c) + "\n";
  }
  return out;
}

/// Parses on top of `base`; unknown keys and malformed lines are rejected.
inline Config parse_config(const std::string& text, Config base = {}) {
  std::map<std::string, const detail::ConfigKey*> lookup;
  for (const auto& key : detail::config_keys()) lookup[key.name] = &key;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string k = detail::trim(line.substr(0, eq));
    const std::string v = detail::trim(line.substr(eq + 1));
    auto it = lookup.find(k);
    if (it == lookup.end()) {
      throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + k +
                            "'");
    }
    it->second->set(base, v);
  }
  validate(base);
  return base;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// The tiny configuration used for whole-model gradient checks.
inline Config tiny_config() {
  Config c;
  c.model.d_model = 8;
  c.model.patch_len = 4;
  c.model.time_layers = 1;
  c.model.entity_layers = 1;
  c.model.heads = 2;
  c.model.prototypes = 2;
  c.sampler.min_context = 8;
  c.sampler.context_cap = 8;
  c.sampler.max_horizon = 4;
  c.sampler.max_variates = 2;
  c.sampler.variate_budget = 4;
  return c;
}

}  // namespace xvariate
