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

// Closed-form parameter counts. A network's size is an affine function of
// the searched widths:
//   fixed + Σ_FD c_fd·fd + Σ_CK D·k + Σ_attention (4D+3)·h·a
// so the expected size under independent per-group distributions replaces
// each width by its mean, with E[h·a] = E[h]·E[a].

#include <cstddef>
#include <vector>

#include "hpadapt/ops.hpp"
#include "hpadapt/space.hpp"

namespace hpadapt {

inline std::size_t linear_param_count(std::size_t in, std::size_t out, bool bias = true) {
  return in * out + (bias ? out : 0);
}

namespace detail {

inline double fixed_param_count(const ModelConfig& cfg) {
  const auto& s = cfg.space;
  const double D = static_cast<double>(s.d_model), F = static_cast<double>(cfg.feat_dim),
               V = static_cast<double>(cfg.vocab);
  const double frontend = 2 * F * D + D + 2 * D * D + D;
  const double ffn = 3 * D;    // norm + output bias
  const double attn = 3 * D;   // norm + output bias
  const double conv = 3 * D * D + 8 * D;  // everything except the depthwise kernel
  const double enc_block = 2 * ffn + attn + conv + 2 * D;
  const double dec_block = 2 * attn + ffn;
  const double enc = static_cast<double>(s.encoder_blocks) * enc_block + 2 * D + D * V + V;
  const double dec = V * D + static_cast<double>(s.decoder_blocks) * dec_block + 2 * D + D * V + V;
  return frontend + enc + dec;
}

// Per-unit coefficients of the searched widths.
struct WidthCoefficients {
  double enc_fd, dec_fd, ck, attn;
};

inline WidthCoefficients width_coefficients(const ModelConfig& cfg) {
  const double D = static_cast<double>(cfg.space.d_model);
  return {2 * (2 * D + 1), 2 * D + 1, D, 4 * D + 3};
}

// Sums coefficients against per-group values produced by `value(g)`; the
// attention product uses value(AH group) * value(ADIM group).
template <class T, class Value, class Mul, class Scale, class Add>
T assemble(const ModelConfig& cfg, T total, Value value, Mul mul, Scale scale, Add add) {
  const auto& s = cfg.space;
  const auto c = width_coefficients(cfg);
  for (std::size_t l = 0; l < s.encoder_blocks; ++l) {
    total = add(total, scale(value(s.group_index(BlockKind::Encoder, l, GroupKind::FD)), c.enc_fd));
    total = add(total, scale(value(s.group_index(BlockKind::Encoder, l, GroupKind::CK)), c.ck));
    total = add(total, scale(mul(value(s.group_index(BlockKind::Encoder, l, GroupKind::AH)),
                                 value(s.group_index(BlockKind::Encoder, l, GroupKind::ADIM))),
                             c.attn));
  }
  for (std::size_t l = 0; l < s.decoder_blocks; ++l) {
    total = add(total, scale(value(s.group_index(BlockKind::Decoder, l, GroupKind::FD)), c.dec_fd));
    for (auto [h, a] : {std::pair{GroupKind::AH, GroupKind::ADIM},
                        std::pair{GroupKind::XAH, GroupKind::XADIM}}) {
      total = add(total, scale(mul(value(s.group_index(BlockKind::Decoder, l, h)),
                                   value(s.group_index(BlockKind::Decoder, l, a))),
                               c.attn));
    }
  }
  return total;
}

}  // namespace detail

// Exact parameter count of the network built with `arch`.
inline std::size_t param_count_formula(const ModelConfig& cfg, const DerivedArch& arch) {
  arch.validate(cfg.space);
  const double n = detail::assemble<double>(
      cfg, detail::fixed_param_count(cfg),
      [&](std::size_t g) { return static_cast<double>(arch.choice[g]); },
      [](double a, double b) { return a * b; }, [](double a, double c) { return a * c; },
      [](double a, double b) { return a + b; });
  return static_cast<std::size_t>(n + 0.5);
}

// Expected parameter count under per-group categorical weights.
inline double param_count_formula(const ModelConfig& cfg,
                                  const std::vector<std::vector<double>>& weights) {
  const auto& s = cfg.space;
  const auto groups = s.groups();
  if (weights.size() != groups.size()) throw InvalidArgument("param_count_formula: group count mismatch");
  auto mean = [&](std::size_t g) {
    const auto& ch = s.choices(groups[g].kind);
    if (weights[g].size() != ch.size()) throw InvalidArgument("param_count_formula: choice count mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < ch.size(); ++i) m += weights[g][i] * ch[i];
    return m;
  };
  return detail::assemble<double>(
      cfg, detail::fixed_param_count(cfg), mean, [](double a, double b) { return a * b; },
      [](double a, double c) { return a * c; }, [](double a, double b) { return a + b; });
}

// Differentiable expected count; `weights` holds one [choices] tensor per group.
inline Tensor param_count_formula(const ModelConfig& cfg, const std::vector<Tensor>& weights) {
  const auto& s = cfg.space;
  const auto groups = s.groups();
  if (weights.size() != groups.size()) throw InvalidArgument("param_count_formula: group count mismatch");
  std::vector<Tensor> means;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& ch = s.choices(groups[g].kind);
    if (weights[g].numel() != ch.size()) throw InvalidArgument("param_count_formula: choice count mismatch");
    Tensor values({ch.size()}, std::vector<double>(ch.begin(), ch.end()));
    means.push_back(ops::sum(ops::mul(weights[g], values)));
  }
  return detail::assemble<Tensor>(
      cfg, Tensor::scalar(detail::fixed_param_count(cfg)),
      [&](std::size_t g) { return means[g]; },
      [](const Tensor& a, const Tensor& b) { return ops::mul(a, b); },
      [](const Tensor& a, double c) { return ops::scale(a, c); },
      [](const Tensor& a, const Tensor& b) { return ops::add(a, b); });
}

}  // namespace hpadapt
