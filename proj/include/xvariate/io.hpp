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

// Dataset directories (JSON manifest + one CSV per entity) and binary
// checkpoints.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xvariate/config.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/model.hpp"
#include "xvariate/params.hpp"
#include "xvariate/preprocess.hpp"
#include "xvariate/synthetic.hpp"

namespace xvariate {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << data;
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- datasets

inline std::string entity_csv(const EntitySeries& e) {
  std::string out = "t";
  for (std::size_t v = 0; v < e.variates(); ++v) out += ",var_" + std::to_string(v);
  out += '\n';
  for (std::size_t t = 0; t < e.length(); ++t) {
    out += std::to_string(t);
    for (std::size_t v = 0; v < e.variates(); ++v) {
      out += ',';
      out += format_double(e.values[v][t]);
    }
    out += '\n';
  }
  return out;
}

inline EntitySeries parse_entity_csv(const std::string& text, const std::string& where) {
  EntitySeries e;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(where + ": empty file");
  std::size_t cols = 1;
  for (char c : line) cols += c == ',';
  if (line.rfind("t,", 0) != 0 || cols < 2) {
    throw ValidationError(where + ":1: header must be t,var_0,...");
  }
  e.values.assign(cols - 1, {});
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const auto next = line.find(',', pos);
      fields.push_back(line.substr(pos, next == std::string::npos ? next : next - pos));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (fields.size() != cols) {
      throw ValidationError(where + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(cols) + " fields, got " +
                            std::to_string(fields.size()));
    }
    for (std::size_t v = 1; v < cols; ++v) {
      const std::string& f = fields[v];
      double value = std::numeric_limits<double>::quiet_NaN();
      if (!f.empty()) {
        char* end = nullptr;
        value = std::strtod(f.c_str(), &end);
        if (end != f.c_str() + f.size()) {
          throw ValidationError(where + ":" + std::to_string(lineno) + ": bad number '" + f +
                                "'");
        }
      }
      e.values[v - 1].push_back(value);
    }
  }
  return e;
}

inline json corpus_spec_json(const CorpusSpec& s) {
  return {{"kernel_entities", s.kernel_entities},
          {"cotemporaneous_entities", s.cotemporaneous_entities},
          {"lead_lag_entities", s.lead_lag_entities},
          {"cointegrated_entities", s.cointegrated_entities},
          {"length", s.length},
          {"max_components", s.kernels.max_components},
          {"lag_min", s.lag_min},
          {"lag_max", s.lag_max},
          {"noise_std", s.noise_std},
          {"reversion", s.reversion},
          {"frequency", s.frequency}};
}

/// Writes `dir/manifest.json` and `dir/<id>.csv` for every entity.
inline void save_dataset(const fs::path& dir, const std::vector<GeneratedEntity>& entities,
                         const json& provenance = json::object()) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json manifest;
  manifest["format"] = "xvariate-dataset";
  manifest["version"] = 1;
  manifest["provenance"] = provenance;
  json list = json::array();
  for (const auto& e : entities) {
    const std::string file = e.series.id + ".csv";
    write_file(dir / file, entity_csv(e.series));
    json gen = json::object();
    for (const auto& [k, v] : e.generator) gen[k] = v;
    list.push_back({{"id", e.series.id},
                    {"file", file},
                    {"variates", e.series.variates()},
                    {"length", e.series.length()},
                    {"frequency", e.series.frequency},
                    {"generator", gen}});
  }
  manifest["entities"] = list;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline void save_dataset(const fs::path& dir, const std::vector<EntitySeries>& series,
                         const json& provenance = json::object()) {
  std::vector<GeneratedEntity> entities;
  for (const auto& s : series) entities.push_back({s, {}});
  save_dataset(dir, entities, provenance);
}

inline std::vector<EntitySeries> load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(mpath));
  } catch (const json::exception& ex) {
    throw ValidationError(mpath.string() + ": " + ex.what());
  }
  if (!manifest.contains("entities") || !manifest["entities"].is_array()) {
    throw ValidationError(mpath.string() + ": missing entities array");
  }
  std::vector<EntitySeries> out;
  for (const auto& item : manifest["entities"]) {
    if (!item.contains("id") || !item.contains("file")) {
      throw ValidationError(mpath.string() + ": entity entries need id and file");
    }
    const fs::path file = dir / item["file"].get<std::string>();
    EntitySeries e = parse_entity_csv(read_file(file), file.string());
    e.id = item["id"].get<std::string>();
    e.frequency = item.value("frequency", std::string("H"));
    if (item.contains("variates") && item["variates"].get<std::size_t>() != e.variates()) {
      throw ValidationError(file.string() + ": manifest says " +
                            std::to_string(item["variates"].get<std::size_t>()) +
                            " variates, file has " + std::to_string(e.variates()));
    }
    if (item.contains("length") && item["length"].get<std::size_t>() != e.length()) {
      throw ValidationError(file.string() + ": manifest says length " +
                            std::to_string(item["length"].get<std::size_t>()) + ", file has " +
                            std::to_string(e.length()));
    }
    out.push_back(std::move(e));
  }
  return out;
}

// ------------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[4] = {'F', 'L', 'C', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string where) : data_(data), where_(std::move(where)) {}

  void need(std::size_t n, const std::string& what) const {
    if (data_.size() - pos_ < n) {
      throw ValidationError(where_ + ": truncated at offset " + std::to_string(pos_) +
                            " reading " + what + ": expected " + std::to_string(n) +
                            " bytes, " + std::to_string(data_.size() - pos_) + " available");
    }
  }
  template <typename T>
  T get(const std::string& what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }
  const std::string& where() const { return where_; }

 private:
  const std::string& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename Real>
std::string checkpoint_bytes(const Config& cfg, const ParamStore<Real>& params) {
  static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>,
                "checkpoints store f32 or f64");
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string text = to_text(cfg);
  w.put<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    const auto& shape = e.var.shape();
    w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) w.put<std::uint64_t>(d);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(std::is_same_v<Real, float> ? DType::kF32
                                                                               : DType::kF64));
    const auto values = e.var.value().values();
    w.bytes(values.data(), values.size() * sizeof(Real));
  }
  return w.str();
}

template <typename Real>
void save_checkpoint(const fs::path& path, const Config& cfg, const ParamStore<Real>& params) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, checkpoint_bytes(cfg, params));
}

struct TensorRecord {
  std::string name;
  Shape shape;
  DType dtype = DType::kF64;
  std::size_t offset = 0;  // payload offset in the file
  std::vector<double> values;
};

struct CheckpointContents {
  std::uint32_t version = 0;
  Config config;
  std::string config_text;
  std::vector<TensorRecord> tensors;
};

/// Parses and validates a checkpoint. The stored config is checked against
/// the model's parameter layout before any tensor is accepted; when
/// `expected` is given its model section must match as well.
inline CheckpointContents read_checkpoint(const fs::path& path,
                                          const ModelConfig* expected = nullptr) {
  const std::string data = read_file(path);
  detail::ByteReader r(data, path.string());
  CheckpointContents c;
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw ValidationError(path.string() + ": bad magic, not a checkpoint");
  }
  c.version = r.get<std::uint32_t>("version");
  if (c.version != kCheckpointVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(c.version));
  }
  const auto len = r.get<std::uint64_t>("config length");
  c.config_text = r.bytes(static_cast<std::size_t>(len), "config text");
  c.config = parse_config(c.config_text);
  if (expected && !(c.config.model == *expected)) {
    throw ValidationError(path.string() + ": checkpoint model config differs from requested " +
                          "config");
  }
  const auto specs = parameter_specs(c.config.model);
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != specs.size()) {
    throw ValidationError(path.string() + ": " + std::to_string(count) +
                          " tensors, config implies " + std::to_string(specs.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    t.name = r.bytes(name_len, "tensor name");
    const auto rank = r.get<std::uint8_t>("rank of " + t.name);
    for (std::uint8_t k = 0; k < rank; ++k) {
      t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims of " + t.name)));
    }
    const auto dtype = r.get<std::uint8_t>("dtype of " + t.name);
    if (dtype > 1) {
      throw ValidationError(path.string() + ": tensor " + t.name + " has unknown dtype " +
                            std::to_string(dtype));
    }
    t.dtype = static_cast<DType>(dtype);
    const auto& spec = specs[i];
    if (t.name != spec.name || t.shape != spec.shape) {
      throw ValidationError(path.string() + ": tensor " + std::to_string(i) + " is " + t.name +
                            shape_str(t.shape) + ", config expects " + spec.name +
                            shape_str(spec.shape));
    }
    const std::size_t n = numel(t.shape);
    const std::size_t width = t.dtype == DType::kF32 ? 4 : 8;
    t.offset = r.offset();
    const std::string payload = r.bytes(n * width, "payload of " + t.name);
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (t.dtype == DType::kF32) {
        float f;
        std::memcpy(&f, payload.data() + k * 4, 4);
        t.values[k] = f;
      } else {
        std::memcpy(&t.values[k], payload.data() + k * 8, 8);
      }
    }
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) {
    throw ValidationError(path.string() + ": " + std::to_string(data.size() - r.offset()) +
                          " trailing bytes after offset " + std::to_string(r.offset()));
  }
  return c;
}

template <typename Real = double>
Model<Real> load_model(const fs::path& path, Config* config_out = nullptr,
                       const ModelConfig* expected = nullptr) {
  auto c = read_checkpoint(path, expected);
  ParamStore<Real> params;
  for (auto& t : c.tensors) {
    Tensor<Real> v(t.shape);
    for (std::size_t k = 0; k < t.values.size(); ++k) v[k] = static_cast<Real>(t.values[k]);
    params.add(t.name, std::move(v));
  }
  if (config_out) *config_out = c.config;
  return Model<Real>(c.config.model, std::move(params));
}

}  // namespace xvariate
