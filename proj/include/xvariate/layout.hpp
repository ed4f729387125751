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
#include <vector>

#include "xvariate/autodiff.hpp"
#include "xvariate/errors.hpp"
#include "xvariate/tensor.hpp"

namespace xvariate {

/// One entity's contiguous block of variate rows in a batch.
struct EntityBlock {
  std::size_t first_row = 0;
  std::size_t count = 0;
  // Leading patches that lie entirely inside left padding.
  std::size_t pad_patches = 0;
};

/// Which rows belong to which entity, and which rows are padding.
struct EntityLayout {
  std::vector<EntityBlock> entities;
  std::vector<bool> padded;  // per row

  std::size_t rows() const { return padded.size(); }
  std::size_t entity_count() const { return entities.size(); }

  std::vector<std::size_t> row_entity() const {
    std::vector<std::size_t> owner(rows(), 0);
    for (std::size_t n = 0; n < entities.size(); ++n) {
      for (std::size_t r = 0; r < entities[n].count; ++r) {
        owner[entities[n].first_row + r] = n;
      }
    }
    return owner;
  }

  /// Blocks must tile [0, rows) in order, and each entity needs at least one
  /// real (unpadded) row.
  void validate(std::size_t expected_rows) const {
    if (expected_rows != rows()) {
      throw ValidationError("entity layout covers " + std::to_string(rows()) +
                            " rows, tensor has " + std::to_string(expected_rows));
    }
    std::size_t next = 0;
    for (std::size_t n = 0; n < entities.size(); ++n) {
      const auto& e = entities[n];
      if (e.first_row != next || e.count == 0) {
        throw ValidationError("entity layout: block " + std::to_string(n) +
                              " does not continue the row tiling");
      }
      bool any_real = false;
      for (std::size_t r = 0; r < e.count; ++r) any_real |= !padded[e.first_row + r];
      if (!any_real) {
        throw ValidationError("entity " + std::to_string(n) + " has no unpadded variates");
      }
      next += e.count;
    }
    if (next != rows()) throw ValidationError("entity layout leaves rows unassigned");
  }

  /// Layout of `counts.size()` entities with the given variate counts.
  static EntityLayout from_counts(const std::vector<std::size_t>& counts) {
    EntityLayout layout;
    std::size_t row = 0;
    for (std::size_t c : counts) {
      layout.entities.push_back({row, c, 0});
      row += c;
    }
    layout.padded.assign(row, false);
    return layout;
  }

  /// [N, M]: 1 where row j belongs to entity n and is not padding.
  template <typename Real>
  Tensor<Real> membership() const {
    Tensor<Real> e(Shape{entities.size(), rows()});
    for (std::size_t n = 0; n < entities.size(); ++n) {
      for (std::size_t r = 0; r < entities[n].count; ++r) {
        const std::size_t row = entities[n].first_row + r;
        if (!padded[row]) e[n * rows() + row] = Real(1);
      }
    }
    return e;
  }
};

}  // namespace xvariate
