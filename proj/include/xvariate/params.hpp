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

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xvariate/autodiff.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/tensor.hpp"

namespace xvariate {

/// Named trainable tensors in insertion order. Names are unique and stable;
/// they key checkpoints and gradient-check reports.
template <typename Real = double>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<Real> var;
  };

  Var<Real> add(const std::string& name, Tensor<Real> init) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, leaf(std::move(init))});
    return entries_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Var<Real>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return entries_[it->second].var;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }

  void zero_grad() const {
    for (const auto& e : entries_) e.var.zero_grad();
  }

  /// Deep copy into another scalar type. The copies are fresh leaves.
  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& e : entries_) out.add(e.name, e.var.value().template cast<Other>());
    return out;
  }

  /// Deep copy in the same scalar type.
  ParamStore clone() const { return cast<Real>(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace xvariate
