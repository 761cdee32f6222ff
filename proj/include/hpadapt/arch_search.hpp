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

// Architecture weights: Gumbel-Softmax sampling, temperature schedule, the
// size-penalized search loss, alternating weight/logit updates and 1-best
// extraction.

#include <cmath>
#include <string>
#include <vector>

#include "hpadapt/optim.hpp"
#include "hpadapt/param_count.hpp"
#include "hpadapt/supernet.hpp"

namespace hpadapt {

// One free logit vector per group, ℓ = log α, initialized to 0.
class ArchLogits {
 public:
  explicit ArchLogits(const std::vector<std::size_t>& group_sizes) {
    for (auto n : group_sizes) {
      if (n == 0) throw InvalidArgument("arch logits: empty group");
      logits_.push_back(Tensor::zeros({n}, true));
    }
  }

  static ArchLogits for_space(const ArchSpace& s) {
    std::vector<std::size_t> sizes;
    for (const auto& g : s.groups()) sizes.push_back(s.choices(g.kind).size());
    return ArchLogits(sizes);
  }

  std::size_t size() const { return logits_.size(); }
  const Tensor& operator[](std::size_t g) const { return logits_.at(g); }
  Tensor& operator[](std::size_t g) { return logits_.at(g); }
  const std::vector<Tensor>& tensors() const { return logits_; }
  std::vector<Tensor>& tensors() { return logits_; }

  void set(std::size_t g, const std::vector<double>& v) {
    auto d = logits_.at(g).mutable_data();
    if (v.size() != d.size()) throw DimensionError("arch logits: group size mismatch");
    std::copy(v.begin(), v.end(), d.begin());
  }

  bool finite() const {
    for (const auto& t : logits_)
      for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
  }

  bool matches(const ArchSpace& s) const {
    const auto groups = s.groups();
    if (groups.size() != logits_.size()) return false;
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (logits_[g].numel() != s.choices(groups[g].kind).size()) return false;
    return true;
  }

  void set_requires_grad(bool r) {
    for (auto& t : logits_) t.set_requires_grad(r);
  }

 private:
  std::vector<Tensor> logits_;
};

// Exponential per-epoch decay from start to end over `epochs` epochs.
struct TempSchedule {
  double start = 1.0;
  double end = 0.1;

  void validate() const {
    if (!(end > 0.0) || !(start >= end)) {
      throw InvalidArgument("temperature schedule needs start >= end > 0");
    }
  }

  double at(std::size_t epoch, std::size_t epochs) const {
    validate();
    if (epochs <= 1) return start;
    const double f = static_cast<double>(std::min(epoch, epochs - 1)) / static_cast<double>(epochs - 1);
    return start * std::pow(end / start, f);
  }
};

// λ = softmax((ℓ + G) / T) with the given noise held constant.
inline std::vector<Tensor> sample_weights(const ArchLogits& logits, double temperature,
                                          const std::vector<std::vector<double>>& noise) {
  if (!(temperature > 0.0)) {
    throw InvalidArgument("sample_weights: temperature must be positive, got " +
                          std::to_string(temperature));
  }
  if (noise.size() != logits.size()) throw DimensionError("sample_weights: noise group count mismatch");
  std::vector<Tensor> out;
  out.reserve(logits.size());
  for (std::size_t g = 0; g < logits.size(); ++g) {
    const Tensor& l = logits[g];
    if (noise[g].size() != l.numel()) throw DimensionError("sample_weights: noise size mismatch");
    Tensor z = ops::add(l, Tensor(l.shape(), noise[g]));
    out.push_back(ops::softmax(ops::scale(z, 1.0 / temperature), 0));
  }
  return out;
}

inline std::vector<std::vector<double>> gumbel_noise(const ArchLogits& logits, Rng& rng) {
  std::vector<std::vector<double>> noise;
  for (const auto& t : logits.tensors()) {
    std::vector<double> n(t.numel());
    for (auto& v : n) v = rng.gumbel();
    noise.push_back(std::move(n));
  }
  return noise;
}

inline std::vector<Tensor> sample_weights(const ArchLogits& logits, double temperature, Rng& rng) {
  return sample_weights(logits, temperature, gumbel_noise(logits, rng));
}

// Noise-free λ̄ = softmax(ℓ).
inline std::vector<Tensor> expected_weights(const ArchLogits& logits) {
  std::vector<Tensor> out;
  for (const auto& t : logits.tensors()) out.push_back(ops::softmax(t, 0));
  return out;
}

inline std::vector<std::vector<double>> to_vectors(const std::vector<Tensor>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

// Penalty weight: the count is in millions of parameters, multiplied by
// eta * eta_scale. eta_scale rescales desk-sized models toward the pressure
// full-size models feel at the same eta.
struct Penalty {
  double eta = 0.0;
  double eta_scale = 1.0;

  static constexpr double kUnit = 1e6;

  double factor() const { return eta * eta_scale / kUnit; }

  void validate() const {
    if (!(eta >= 0.0)) throw InvalidArgument("penalty: eta must be nonnegative");
    if (!(eta_scale > 0.0)) throw InvalidArgument("penalty: eta_scale must be positive");
  }
};

// task + eta * s * E_λ̄[#params] / 1e6. With eta == 0 the task loss tensor
// is returned unchanged.
inline Tensor penalized_loss(const Tensor& task, const ArchLogits& logits, const ModelConfig& cfg,
                             const Penalty& pen) {
  pen.validate();
  if (pen.eta == 0.0) return task;
  return ops::add(task, ops::scale(param_count_formula(cfg, expected_weights(logits)), pen.factor()));
}

inline Tensor penalized_loss(const Tensor& task, const ArchLogits& logits, const ModelConfig& cfg,
                             double eta) {
  return penalized_loss(task, logits, cfg, Penalty{eta, 1.0});
}

// Per group, the choice with the largest logit; ties go to the smaller
// candidate (choice lists are increasing, so the lower index).
inline DerivedArch extract(const ArchLogits& logits, const ArchSpace& s) {
  if (!logits.matches(s)) throw InvalidArgument("extract: logits do not match the search space");
  if (!logits.finite()) throw InvalidArgument("extract: logits are not finite");
  std::vector<std::size_t> idx;
  for (const auto& t : logits.tensors()) {
    const auto d = t.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i)
      if (d[i] > d[best]) best = i;
    idx.push_back(best);
  }
  return DerivedArch::from_indices(s, idx);
}

// Binds a supernet to the search loop:
//   loss(batch, λ)  task loss of the mixed forward
//   cost(λ̄)        penalty term (already scaled)
//   weights()       shared parameters
struct SupernetSearch {
  Supernet& net;
  Penalty penalty;

  Tensor loss(const Batch& b, const std::vector<Tensor>& lam) const {
    return task_loss(net.mixed_forward(b, lam), b, net.config());
  }
  Tensor cost(const std::vector<Tensor>& lam_bar) const {
    return ops::scale(param_count_formula(net.config(), lam_bar), penalty.factor());
  }
  ParamSet& weights() { return net.weights(); }
};

struct StepLosses {
  double train = 0.0;
  double heldout = 0.0;  // penalized; 0 when the logit step is skipped
};

// Which halves of an alternating step run. Weight and logit updates can have
// different epoch budgets, so either may be switched off.
struct StepPlan {
  bool weights = true;
  bool logits = true;
};

// One update of the shared weights on `train` with sampled, detached λ,
// then one update of the logits on `heldout` with the weights frozen.
template <class Search, class B>
StepLosses alternating_step(Search& search, ArchLogits& logits, const B& train, const B& heldout,
                            Adam& weight_opt, Adam& logit_opt, double temperature, Rng& rng,
                            StepPlan plan = {}) {
  if (train.size() == 0 || heldout.size() == 0) {
    throw InvalidArgument("alternating_step: empty batch");
  }
  StepLosses out;
  if (plan.weights) {
    std::vector<Tensor> lam;
    {
      NoGradGuard ng;
      lam = sample_weights(logits, temperature, rng);
    }
    Tensor loss = search.loss(train, lam);
    out.train = loss.item();
    if (!std::isfinite(out.train)) {
      Tape::current().discard();
      throw DivergenceError("weight step: non-finite loss");
    }
    backward(loss);
    weight_opt.step();
  }
  if (!plan.logits) return out;
  search.weights().set_requires_grad(false);
  try {
    const auto lam = sample_weights(logits, temperature, rng);
    Tensor loss = search.loss(heldout, lam);
    if (search.penalty.eta != 0.0) loss = ops::add(loss, search.cost(expected_weights(logits)));
    out.heldout = loss.item();
    if (!std::isfinite(out.heldout)) throw DivergenceError("logit step: non-finite loss");
    backward(loss);
    logit_opt.step();
  } catch (...) {
    Tape::current().discard();
    search.weights().set_requires_grad(true);
    throw;
  }
  search.weights().set_requires_grad(true);
  return out;
}

}  // namespace hpadapt
