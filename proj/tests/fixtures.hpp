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

// Small model configurations and random batches shared by the test suites.

#include <random>
#include <vector>

#include "hpadapt/supernet.hpp"

namespace hpadapt::oracle {

// Tiny space for unit tests.
inline ModelConfig tiny_config(bool split_decoder_attention = false) {
  ModelConfig c;
  c.space.fd = {8, 16, 24};
  c.space.ah = {1, 2};
  c.space.adim = {2, 4};
  c.space.ck = {3, 5, 7};
  c.space.d_model = 8;
  c.space.encoder_blocks = 2;
  c.space.decoder_blocks = 1;
  c.space.split_decoder_attention = split_decoder_attention;
  c.feat_dim = 4;
  c.vocab = 6;
  return c;
}

// Reduced space of the acceptance checks: D=32, 2 encoder blocks, 1 decoder block.
inline ModelConfig reduced_config() {
  ModelConfig c;
  c.space.fd = {32, 64, 128};
  c.space.ah = {1, 2, 4};
  c.space.adim = {4, 8};
  c.space.ck = {3, 5, 7};
  c.space.d_model = 32;
  c.space.encoder_blocks = 2;
  c.space.decoder_blocks = 1;
  c.feat_dim = 8;
  c.vocab = 8;
  return c;
}

inline Batch random_batch(const ModelConfig& cfg, std::size_t n, std::mt19937_64& rng,
                          std::size_t min_frames = 16, std::size_t max_frames = 24) {
  Batch b;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t T = min_frames + rng() % (max_frames - min_frames + 1);
    std::vector<double> v(T * cfg.feat_dim);
    for (auto& x : v) x = u(rng);
    b.features.emplace_back(Shape{T, cfg.feat_dim}, std::move(v));
    b.lengths.push_back(T - rng() % 3);
    std::vector<int> y(1 + rng() % 3);
    for (auto& t : y) t = 1 + static_cast<int>(rng() % (cfg.vocab - 2));
    b.tokens.push_back(std::move(y));
  }
  return b;
}

inline std::vector<Tensor> random_mixing_weights(const ArchSpace& s, std::mt19937_64& rng,
                                                 bool requires_grad = false) {
  std::vector<Tensor> out;
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (const auto& g : s.groups()) {
    const auto n = s.choices(g.kind).size();
    std::vector<double> v(n);
    double z = 0.0;
    for (auto& x : v) z += (x = u(rng));
    for (auto& x : v) x /= z;
    out.emplace_back(Shape{n}, std::move(v), requires_grad);
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return 1e300;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const ForwardResult& a, const ForwardResult& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.enc.size(); ++i) {
    m = std::max(m, max_abs_diff(a.enc[i], b.enc[i]));
    m = std::max(m, max_abs_diff(a.ctc_log_probs[i], b.ctc_log_probs[i]));
    m = std::max(m, max_abs_diff(a.dec_logits[i], b.dec_logits[i]));
  }
  return m;
}

}  // namespace hpadapt::oracle
