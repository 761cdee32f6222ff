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

#include <cmath>
#include <vector>

#include "hpadapt/tensor.hpp"

namespace hpadapt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 5.0;  // global grad-norm clip; <= 0 disables
};

struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m, v;

  bool operator==(const AdamState&) const = default;
};

// First/second-moment adaptive optimizer over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    reset();
  }

  void reset() {
    state_.step = 0;
    state_.m.clear();
    state_.v.clear();
    for (const auto& p : params_) {
      state_.m.emplace_back(p.numel(), 0.0);
      state_.v.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_) {
      if (!p.has_grad()) continue;
      for (double g : p.grad()) s += g * g;
    }
    return std::sqrt(s);
  }

  // Applies one update from the accumulated grads, then clears them.
  void step() {
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
      const double n = grad_norm();
      if (n > cfg_.clip_norm) scale = cfg_.clip_norm / n;
    }
    ++state_.step;
    const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step));
    const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      if (!p.has_grad()) continue;
      auto g = p.mutable_grad();
      auto w = p.mutable_data();
      auto& m = state_.m[k];
      auto& v = state_.v[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * scale;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        w[i] -= cfg_.lr * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + cfg_.eps);
      }
    }
    zero_grad();
  }

  const AdamState& state() const { return state_; }
  void set_state(AdamState s) {
    if (s.m.size() != params_.size() || s.v.size() != params_.size()) {
      throw IncompatibleCheckpoint("optimizer state does not match parameter list");
    }
    state_ = std::move(s);
  }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace hpadapt
