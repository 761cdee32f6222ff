/* Copyright 2026 The hpadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Conformer / Transformer building blocks shared by the supernet and by
// standalone derived models. Every sequence tensor is [frames, width].

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hpadapt/ops.hpp"
#include "hpadapt/rng.hpp"

namespace hpadapt {

// Named tensors kept in insertion order, so iteration (and therefore
// serialization and optimizer order) is deterministic.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
    return items_[it->second].second;
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& [n, t] : items_) out.push_back(t);
    return out;
  }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void set_requires_grad(bool r) {
    for (auto& [n, t] : items_) t.set_requires_grad(r);
  }

  // Deep copy into fresh leaves.
  ParamSet clone(bool requires_grad = true) const {
    ParamSet p;
    for (const auto& [n, t] : items_) p.add(n, t.clone_leaf(requires_grad));
    return p;
  }

  bool values_equal(const ParamSet& o) const {
    if (items_.size() != o.items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (items_[i].first != o.items_[i].first) return false;
      const auto& a = items_[i].second;
      const auto& b = o.items_[i].second;
      if (a.shape() != b.shape()) return false;
      if (!std::equal(a.data().begin(), a.data().end(), b.data().begin())) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace nn {

using namespace hpadapt::ops;

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

inline Tensor sinusoidal_positions(std::size_t T, std::size_t D) {
  std::vector<double> v(T * D);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < D; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(D));
      v[t * D + i] = (i % 2 == 0) ? std::sin(static_cast<double>(t) * rate)
                                  : std::cos(static_cast<double>(t) * rate);
    }
  }
  return Tensor({T, D}, std::move(v));
}

inline std::vector<bool> causal_mask(std::size_t T) {
  std::vector<bool> m(T * T, false);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = i + 1; j < T; ++j) m[i * T + j] = true;
  return m;
}

// Uniform(-b, b) with Glorot bound for a [fan_in, fan_out] matrix.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double b = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-b, b);
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

inline Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }
inline Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }

// Stride-2 pairing of adjacent frames followed by a projection and ReLU,
// applied twice: [T, F] -> [T/4, D].
inline Tensor subsample(const Tensor& x, const ParamSet& p) {
  const std::size_t T = x.dim(0), F = x.dim(1);
  const std::size_t T2 = T / 2, T4 = T2 / 2;
  if (T4 == 0) {
    throw DimensionError("subsample: need at least 4 frames, got " + std::to_string(T));
  }
  Tensor h = reshape(T2 * 2 == T ? x : slice(x, 0, 0, T2 * 2), {T2, 2 * F});
  h = relu(linear(h, p.at("frontend.w1"), p.at("frontend.b1")));
  const std::size_t D = h.dim(1);
  h = reshape(T4 * 2 == T2 ? h : slice(h, 0, 0, T4 * 2), {T4, 2 * D});
  h = relu(linear(h, p.at("frontend.w2"), p.at("frontend.b2")));
  return add(h, sinusoidal_positions(T4, D));
}

inline Tensor norm(const Tensor& x, const ParamSet& p, const std::string& prefix) {
  return layer_norm(x, p.at(prefix + "_g"), p.at(prefix + "_b"));
}

// Pre-norm feed-forward: LN -> W1 -> swish -> [hidden mask] -> W2.
// `hidden_mask` ([hidden]) scales hidden units; undefined for no mask.
inline Tensor feed_forward(const Tensor& x, const ParamSet& p, const std::string& m,
                           const Tensor& hidden_mask = {}) {
  Tensor h = swish(linear(norm(x, p, m + ".ln"), p.at(m + ".w1"), p.at(m + ".b1")));
  if (hidden_mask.defined()) h = mul(h, hidden_mask);
  return linear(h, p.at(m + ".w2"), p.at(m + ".b2"));
}

struct Projections {
  Tensor q, k, v;
};

inline Projections project_qkv(const Tensor& xq, const Tensor& xkv, const ParamSet& p,
                               const std::string& m) {
  return {linear(xq, p.at(m + ".wq"), p.at(m + ".bq")),
          linear(xkv, p.at(m + ".wk"), p.at(m + ".bk")),
          linear(xkv, p.at(m + ".wv"), p.at(m + ".bv"))};
}

// Concatenated outputs of `heads` heads of width `head_dim`, head k using
// columns [k*head_dim, (k+1)*head_dim) of the projections.
inline Tensor attend_heads(const Projections& pr, std::size_t heads, std::size_t head_dim,
                           bool causal) {
  const std::size_t Tq = pr.q.dim(0), Tk = pr.k.dim(0);
  const double inv = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  const auto mask = causal ? causal_mask(Tq) : std::vector<bool>{};
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * head_dim, e = b + head_dim;
    Tensor scores = scale(matmul(slice(pr.q, 1, b, e), transpose(slice(pr.k, 1, b, e))), inv);
    if (causal) {
      if (Tq != Tk) throw DimensionError("attention: causal mask needs square scores");
      scores = masked_fill(scores, mask, -1e9);
    }
    ctx.push_back(matmul(softmax(scores, 1), slice(pr.v, 1, b, e)));
  }
  return heads == 1 ? ctx[0] : concat(ctx, 1);
}

// Single-configuration attention; projections in `p` already sized to
// heads * head_dim.
inline Tensor attention(const Tensor& xq, const Tensor& xkv, const ParamSet& p,
                        const std::string& m, std::size_t heads, std::size_t head_dim,
                        bool causal) {
  const Tensor q_in = norm(xq, p, m + ".ln");
  const Tensor kv_in = (&xq == &xkv) ? q_in : xkv;
  auto pr = project_qkv(q_in, kv_in, p, m);
  return linear(attend_heads(pr, heads, head_dim, causal), p.at(m + ".wo"), p.at(m + ".bo"));
}

// LN -> pointwise(2D) -> GLU -> depthwise(kernel) -> LN -> swish -> pointwise.
inline Tensor conv_module(const Tensor& x, const ParamSet& p, const std::string& m,
                          const Tensor& kernel) {
  Tensor h = glu(linear(norm(x, p, m + ".ln"), p.at(m + ".pw1_w"), p.at(m + ".pw1_b")));
  h = add(depthwise_conv1d(h, kernel), p.at(m + ".dw_b"));
  h = swish(norm(h, p, m + ".ln2"));
  return linear(h, p.at(m + ".pw2_w"), p.at(m + ".pw2_b"));
}

}  // namespace nn
}  // namespace hpadapt
