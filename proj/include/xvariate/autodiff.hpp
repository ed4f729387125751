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

// Reverse-mode differentiation over dense tensors. Every op records a
// backward closure on the output node; backward() walks the graph in reverse
// topological order and accumulates cotangents into the inputs.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xvariate/errors.hpp"
#include "xvariate/tensor.hpp"

namespace xvariate {

// 1 = position participates, 0 = masked out.
using Mask = Tensor<std::uint8_t>;

namespace detail {
inline bool& grad_disabled_flag() {
  thread_local bool disabled = false;
  return disabled;
}
}  // namespace detail

/// While alive, ops on this thread produce constants and record no backward.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled_flag()) {
    detail::grad_disabled_flag() = true;
  }
  ~NoGradGuard() { detail::grad_disabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Real>
struct Node {
  using BackwardFn = std::function<void(const Tensor<Real>& grad_out,
                                        const Tensor<Real>& value)>;

  Tensor<Real> value;
  Tensor<Real> grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  Tensor<Real>& grad_buffer() {
    if (grad.empty()) grad = Tensor<Real>(value.shape());
    return grad;
  }
};

template <typename Real = double>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

  const Tensor<Real>& value() const { return node_->value; }
  Tensor<Real>& mutable_value() { return node_->value; }
  const Tensor<Real>& grad() const { return node_->grad; }
  Tensor<Real>& grad_buffer() const { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }
  Real item() const { return node_->value[0]; }

  void zero_grad() const { node_->grad = Tensor<Real>(); }

  Node<Real>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Real>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

template <typename Real>
Var<Real> constant(Tensor<Real> value) {
  auto node = std::make_shared<Node<Real>>();
  node->value = std::move(value);
  return Var<Real>(std::move(node));
}

/// Trainable leaf; gradients accumulate until zero_grad().
template <typename Real>
Var<Real> leaf(Tensor<Real> value) {
  auto node = std::make_shared<Node<Real>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<Real>(std::move(node));
}

/// Wraps an op output. The backward closure runs only if some input needs
/// a gradient and grad mode is on.
template <typename Real>
Var<Real> make_result(Tensor<Real> value, std::initializer_list<Var<Real>> inputs,
                      typename Node<Real>::BackwardFn backward) {
  auto node = std::make_shared<Node<Real>>();
  node->value = std::move(value);
  if (!detail::grad_disabled_flag()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(in.ptr());
      }
    }
    if (node->requires_grad) node->backward = std::move(backward);
  }
  return Var<Real>(std::move(node));
}

template <typename Real>
Var<Real> make_result(Tensor<Real> value, const std::vector<Var<Real>>& inputs,
                      typename Node<Real>::BackwardFn backward) {
  auto node = std::make_shared<Node<Real>>();
  node->value = std::move(value);
  if (!detail::grad_disabled_flag()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(in.ptr());
      }
    }
    if (node->requires_grad) node->backward = std::move(backward);
  }
  return Var<Real>(std::move(node));
}

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
template <typename Real>
void backward(const Var<Real>& root) {
  if (root.size() != 1) {
    throw ValidationError("backward() needs a scalar root, got " +
                          shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad, n->value);
  }
}

namespace kernel {

// C[r x c] (+)= op(A) * op(B); op(A) is r x k, op(B) is k x c.
template <typename Real>
void gemm(const Real* a, const Real* b, Real* c, std::size_t r, std::size_t k,
          std::size_t cols, bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + r * cols, Real(0));
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < r; ++i) {
      Real* ci = c + i * cols;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = a[i * k + p];
        if (av == Real(0)) continue;
        const Real* bp = b + p * cols;
        for (std::size_t j = 0; j < cols; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < r; ++i) {
      const Real* ai = a + i * k;
      for (std::size_t j = 0; j < cols; ++j) {
        const Real* bj = b + j * k;
        Real s = 0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * cols + j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real* ap = a + p * r;
      const Real* bp = b + p * cols;
      for (std::size_t i = 0; i < r; ++i) {
        const Real av = ap[i];
        if (av == Real(0)) continue;
        Real* ci = c + i * cols;
        for (std::size_t j = 0; j < cols; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        Real s = 0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * r + i] * b[j * k + p];
        c[i * cols + j] += s;
      }
    }
  }
}

}  // namespace kernel

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a) +
                          " vs " + shape_str(b));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

/// a + b. b may also be a trailing-suffix shape of a (bias-style broadcast).
template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    throw ValidationError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  Tensor<Real> out = a.value();
  const std::size_t nb = b.size();
  const Real* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % nb];
  return make_result<Real>(std::move(out), {a, b},
                           [a, b](const Tensor<Real>& g, const Tensor<Real>&) {
                             if (a.requires_grad()) {
                               auto& ga = a.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             }
                             if (b.requires_grad()) {
                               auto& gb = b.grad_buffer();
                               const std::size_t n = gb.size();
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                             }
                           });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<Real>(std::move(out), {a, b},
                           [a, b](const Tensor<Real>& g, const Tensor<Real>&) {
                             if (a.requires_grad()) {
                               auto& ga = a.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             }
                             if (b.requires_grad()) {
                               auto& gb = b.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                             }
                           });
}

/// Hadamard product; b may be a trailing-suffix shape of a.
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    throw ValidationError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  Tensor<Real> out = a.value();
  const std::size_t nb = b.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i % nb];
  return make_result<Real>(
      std::move(out), {a, b}, [a, b](const Tensor<Real>& g, const Tensor<Real>&) {
        const std::size_t nb = b.size();
        if (a.requires_grad()) {
          auto& ga = a.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i % nb];
        }
        if (b.requires_grad()) {
          auto& gb = b.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * a.value()[i];
        }
      });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s) {
  Tensor<Real> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_result<Real>(std::move(out), {a},
                           [a, s](const Tensor<Real>& g, const Tensor<Real>&) {
                             auto& ga = a.grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                           });
}

/// a * s where s is a one-element Var (a learnable scalar).
template <typename Real>
Var<Real> scale_by(const Var<Real>& a, const Var<Real>& s) {
  if (s.size() != 1) {
    throw ValidationError("scale_by: expected a scalar, got " + shape_str(s.shape()));
  }
  const Real sv = s.item();
  Tensor<Real> out = a.value();
  for (auto& v : out.values()) v *= sv;
  return make_result<Real>(std::move(out), {a, s},
                           [a, s](const Tensor<Real>& g, const Tensor<Real>&) {
                             if (a.requires_grad()) {
                               auto& ga = a.grad_buffer();
                               const Real sv = s.item();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += sv * g[i];
                             }
                             if (s.requires_grad()) {
                               Real acc = 0;
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 acc += g[i] * a.value()[i];
                               }
                               s.grad_buffer()[0] += acc;
                             }
                           });
}

/// Elementwise product with a constant tensor (no gradient to c).
template <typename Real>
Var<Real> mul_const(const Var<Real>& a, const Tensor<Real>& c) {
  detail::require_same(a.shape(), c.shape(), "mul_const");
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return make_result<Real>(std::move(out), {a},
                           [a, c](const Tensor<Real>& g, const Tensor<Real>&) {
                             auto& ga = a.grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
                           });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x.value()[i];
    if (v >= 0) {
      out[i] = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      out[i] = e / (Real(1) + e);
    }
  }
  return make_result<Real>(std::move(out), {x},
                           [x](const Tensor<Real>& g, const Tensor<Real>& y) {
                             auto& gx = x.grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += g[i] * y[i] * (Real(1) - y[i]);
                             }
                           });
}

template <typename Real>
Var<Real> tanh(const Var<Real>& x) {
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
  return make_result<Real>(std::move(out), {x},
                           [x](const Tensor<Real>& g, const Tensor<Real>& y) {
                             auto& gx = x.grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += g[i] * (Real(1) - y[i] * y[i]);
                             }
                           });
}

/// Exact (erf-based) GELU.
template <typename Real>
Var<Real> gelu(const Var<Real>& x) {
  const Real inv_sqrt2 = Real(1) / std::sqrt(Real(2));
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x.value()[i];
    out[i] = Real(0.5) * v * (Real(1) + std::erf(v * inv_sqrt2));
  }
  return make_result<Real>(
      std::move(out), {x}, [x, inv_sqrt2](const Tensor<Real>& g, const Tensor<Real>&) {
        const Real inv_sqrt_2pi = Real(1) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
        auto& gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Real v = x.value()[i];
          const Real cdf = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
          const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * v * v);
          gx[i] += g[i] * (cdf + v * pdf);
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product. a is [..., r, k]; b is [..., k, c] (or [..., c, k]
/// with trans_b). Leading extents must match, or one operand is a plain
/// matrix shared across the other's batch.
template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b, bool trans_b = false) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&]() {
    return ValidationError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                           shape_str(sb) + (trans_b ? " (b transposed)" : ""));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t r = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = trans_b ? sb[sb.size() - 1] : sb[sb.size() - 2];
  const std::size_t c = trans_b ? sb[sb.size() - 2] : sb[sb.size() - 1];
  if (k != kb) throw mismatch();
  const Shape lead_a(sa.begin(), sa.end() - 2);
  const Shape lead_b(sb.begin(), sb.end() - 2);
  Shape lead;
  if (lead_a == lead_b) {
    lead = lead_a;
  } else if (lead_b.empty()) {
    lead = lead_a;
  } else if (lead_a.empty()) {
    lead = lead_b;
  } else {
    throw mismatch();
  }
  const std::size_t batch = numel(lead);
  const std::size_t stride_a = lead_a.empty() ? 0 : r * k;
  const std::size_t stride_b = lead_b.empty() ? 0 : k * c;
  Shape out_shape = lead;
  out_shape.push_back(r);
  out_shape.push_back(c);
  Tensor<Real> out(out_shape);
  for (std::size_t bt = 0; bt < batch; ++bt) {
    kernel::gemm(a.value().data() + bt * stride_a, b.value().data() + bt * stride_b,
                 out.data() + bt * r * c, r, k, c, false, trans_b, false);
  }
  return make_result<Real>(
      std::move(out), {a, b},
      [a, b, trans_b, batch, r, k, c, stride_a, stride_b](const Tensor<Real>& g,
                                                         const Tensor<Real>&) {
        if (a.requires_grad()) {
          auto& ga = a.grad_buffer();
          // dA = dC * op(B)^T
          for (std::size_t bt = 0; bt < batch; ++bt) {
            kernel::gemm(g.data() + bt * r * c, b.value().data() + bt * stride_b,
                         ga.data() + bt * stride_a, r, c, k, false, !trans_b, true);
          }
        }
        if (b.requires_grad()) {
          auto& gb = b.grad_buffer();
          for (std::size_t bt = 0; bt < batch; ++bt) {
            if (trans_b) {
              // B is c x k: dB = dC^T * A
              kernel::gemm(g.data() + bt * r * c, a.value().data() + bt * stride_a,
                           gb.data() + bt * stride_b, c, r, k, true, false, true);
            } else {
              // dB = A^T * dC
              kernel::gemm(a.value().data() + bt * stride_a, g.data() + bt * r * c,
                           gb.data() + bt * stride_b, k, r, c, true, false, true);
            }
          }
        }
      });
}

/// x W^T + b over the last axis. W is [out, in]; b (optional) is [out].
template <typename Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>* b = nullptr) {
  if (w.shape().size() != 2 || x.shape().empty() || x.shape().back() != w.shape()[1]) {
    throw ValidationError("linear: input " + shape_str(x.shape()) +
                          " incompatible with weight " + shape_str(w.shape()));
  }
  const std::size_t in = w.shape()[1];
  const std::size_t out_dim = w.shape()[0];
  if (b && b->shape() != Shape{out_dim}) {
    throw ValidationError("linear: bias " + shape_str(b->shape()) +
                          " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor<Real> out(out_shape);
  kernel::gemm(x.value().data(), w.value().data(), out.data(), rows, in, out_dim, false,
               true, false);
  if (b) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += b->value()[j];
    }
  }
  Var<Real> bias = b ? *b : Var<Real>();
  std::vector<Var<Real>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return make_result<Real>(
      std::move(out), inputs,
      [x, w, bias, rows, in, out_dim](const Tensor<Real>& g, const Tensor<Real>&) {
        if (x.requires_grad()) {
          kernel::gemm(g.data(), w.value().data(), x.grad_buffer().data(), rows, out_dim,
                       in, false, false, true);
        }
        if (w.requires_grad()) {
          kernel::gemm(g.data(), x.value().data(), w.grad_buffer().data(), out_dim, rows,
                       in, true, false, true);
        }
        if (bias.requires_grad()) {
          auto& gb = bias.grad_buffer();
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalizations

/// Softmax over the last axis with max subtraction. An optional mask (same
/// shape as x, or a trailing suffix of it) zeroes excluded positions; a row
/// with every position excluded is rejected.
template <typename Real>
Var<Real> softmax_lastdim(const Var<Real>& x, const Mask* mask = nullptr) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) {
    throw ValidationError("softmax_lastdim: empty last axis in " + shape_str(s));
  }
  if (mask && !detail::is_suffix(mask->shape(), s)) {
    throw ValidationError("softmax_lastdim: mask " + shape_str(mask->shape()) +
                          " does not broadcast to " + shape_str(s));
  }
  const std::size_t n = s.back();
  const std::size_t rows = x.size() / n;
  const std::size_t mask_size = mask ? mask->size() : 0;
  Tensor<Real> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.value().data() + r * n;
    Real* yr = out.data() + r * n;
    const std::size_t moff = mask ? (r * n) % mask_size : 0;
    auto allowed = [&](std::size_t j) { return !mask || (*mask)[moff + j] != 0; };
    Real mx = -std::numeric_limits<Real>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed(j)) {
        mx = std::max(mx, xr[j]);
        any = true;
      }
    }
    if (!any) {
      throw ValidationError("softmax_lastdim: row " + std::to_string(r) +
                            " has every position masked");
    }
    Real sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = allowed(j) ? std::exp(xr[j] - mx) : Real(0);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
  return make_result<Real>(std::move(out), {x},
                           [x, n, rows](const Tensor<Real>& g, const Tensor<Real>& y) {
                             auto& gx = x.grad_buffer();
                             for (std::size_t r = 0; r < rows; ++r) {
                               const Real* yr = y.data() + r * n;
                               const Real* gr = g.data() + r * n;
                               Real dot = 0;
                               for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                               for (std::size_t j = 0; j < n; ++j) {
                                 gx[r * n + j] += yr[j] * (gr[j] - dot);
                               }
                             }
                           });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-slice standardization over the last axis (population variance,
/// epsilon inside the square root), then gain and bias.
template <typename Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gain, const Var<Real>& bias) {
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ValidationError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = x.size() / d;
  Tensor<Real> out(x.shape());
  Tensor<Real> xhat(x.shape());
  std::vector<Real> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.value().data() + r * d;
    Real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= Real(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= Real(d);
    rstd[r] = Real(1) / std::sqrt(var + Real(kLayerNormEps));
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (xr[j] - mean) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  return make_result<Real>(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](
          const Tensor<Real>& g, const Tensor<Real>&) {
        if (gain.requires_grad() || bias.requires_grad()) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gain.requires_grad()) gain.grad_buffer()[j] += g[r * d + j] * xhat[r * d + j];
              if (bias.requires_grad()) bias.grad_buffer()[j] += g[r * d + j];
            }
          }
        }
        if (x.requires_grad()) {
          auto& gx = x.grad_buffer();
          std::vector<Real> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            Real mean_dh = 0;
            Real mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = g[r * d + j] * gain.value()[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[r * d + j];
            }
            mean_dh /= Real(d);
            mean_dh_h /= Real(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
  Tensor<Real> out = x.value().reshaped(std::move(shape));
  return make_result<Real>(std::move(out), {x},
                           [x](const Tensor<Real>& g, const Tensor<Real>&) {
                             auto& gx = x.grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           });
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each output flat index, the input flat index it reads.
inline std::vector<std::size_t> permute_map(const Shape& in_shape,
                                            const std::vector<std::size_t>& axes) {
  const std::size_t r = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<std::size_t> map(numel(in_shape));
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < map.size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[axes[i]];
    map[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// out.shape[i] = x.shape[axes[i]].
template <typename Real>
Var<Real> permute(const Var<Real>& x, const std::vector<std::size_t>& axes) {
  const Shape& s = x.shape();
  if (axes.size() != s.size()) {
    throw ValidationError("permute: " + std::to_string(axes.size()) + " axes for " +
                          shape_str(s));
  }
  std::vector<bool> used(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= s.size() || used[axes[i]]) {
      throw ValidationError("permute: invalid axis list for " + shape_str(s));
    }
    used[axes[i]] = true;
    out_shape[i] = s[axes[i]];
  }
  auto map = std::make_shared<std::vector<std::size_t>>(detail::permute_map(s, axes));
  Tensor<Real> out(out_shape);
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = x.value()[(*map)[o]];
  return make_result<Real>(std::move(out), {x},
                           [x, map](const Tensor<Real>& g, const Tensor<Real>&) {
                             auto& gx = x.grad_buffer();
                             for (std::size_t o = 0; o < g.size(); ++o) gx[(*map)[o]] += g[o];
                           });
}

/// Half-open range [begin, end) along one axis.
template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ValidationError("slice: range [" + std::to_string(begin) + "," +
                          std::to_string(end) + ") invalid on axis " +
                          std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  Tensor<Real> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().data() + (o * n + begin) * inner, len * inner,
                out.data() + o * len * inner);
  }
  return make_result<Real>(
      std::move(out), {x},
      [x, outer, inner, n, begin, len](const Tensor<Real>& g, const Tensor<Real>&) {
        auto& gx = x.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < len * inner; ++i) {
            gx[(o * n + begin) * inner + i] += g[o * len * inner + i];
          }
        }
      });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis) {
  if (parts.empty()) throw ValidationError("concat: no inputs");
  Shape out_shape = parts.front().shape();
  if (axis >= out_shape.size()) throw ValidationError("concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = parts.front().shape();
    if (a.size() != b.size()) throw ValidationError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw ValidationError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                            shape_str(parts.front().shape()));
    }
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  const std::size_t total = out_shape[axis];
  Tensor<Real> out(out_shape);
  std::size_t at = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().data() + o * n * inner, n * inner,
                  out.data() + (o * total + at) * inner);
    }
    at += n;
  }
  return make_result<Real>(std::move(out), parts,
                           [parts, axis, outer, inner, total](const Tensor<Real>& g,
                                                              const Tensor<Real>&) {
                             std::size_t at = 0;
                             for (const auto& p : parts) {
                               const std::size_t n = p.shape()[axis];
                               if (p.requires_grad()) {
                                 auto& gp = p.grad_buffer();
                                 for (std::size_t o = 0; o < outer; ++o) {
                                   for (std::size_t i = 0; i < n * inner; ++i) {
                                     gp[o * n * inner + i] += g[(o * total + at) * inner + i];
                                   }
                                 }
                               }
                               at += n;
                             }
                           });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Real>
Var<Real> sum(const Var<Real>& x) {
  Real s = 0;
  for (Real v : x.value().values()) s += v;
  return make_result<Real>(Tensor<Real>::scalar(s), {x},
                           [x](const Tensor<Real>& g, const Tensor<Real>&) {
                             auto& gx = x.grad_buffer();
                             for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                           });
}

template <typename Real>
Var<Real> mean(const Var<Real>& x) {
  return scale(sum(x), Real(1) / Real(x.size()));
}

}  // namespace xvariate
