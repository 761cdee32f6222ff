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

// Hybrid CTC + attention objective, greedy attention decoding and token
// error rate.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hpadapt/ops.hpp"

namespace hpadapt {

namespace detail {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

}  // namespace detail

// Minimum frames needed to emit `ref` under CTC: one per label plus a blank
// between each pair of equal neighbours.
inline std::size_t ctc_min_frames(std::span<const int> ref) {
  std::size_t n = ref.size();
  for (std::size_t i = 1; i < ref.size(); ++i)
    if (ref[i] == ref[i - 1]) ++n;
  return n;
}

// -log P(ref | log_probs) summed over all CTC alignments. log_probs is
// [frames, vocab] and must already be normalized per frame.
inline Tensor ctc_loss(const Tensor& log_probs, std::span<const int> ref,
                       int blank = 0) {
  using detail::kLogZero;
  using detail::log_add;
  if (log_probs.rank() != 2) {
    throw DimensionError("ctc_loss: log_probs must be [frames, vocab], got " +
                         shape_str(log_probs.shape()));
  }
  const std::size_t T = log_probs.dim(0), V = log_probs.dim(1);
  for (int y : ref) {
    if (y < 0 || static_cast<std::size_t>(y) >= V || y == blank) {
      throw InvalidArgument("ctc_loss: reference label " + std::to_string(y) +
                            " invalid for vocab " + std::to_string(V));
    }
  }
  if (ctc_min_frames(ref) > T) {
    throw InfeasibleAlignment("ctc_loss: reference of length " +
                              std::to_string(ref.size()) + " needs " +
                              std::to_string(ctc_min_frames(ref)) +
                              " frames, have " + std::to_string(T));
  }

  // Extended label sequence with blanks interleaved.
  std::vector<int> ext(2 * ref.size() + 1, blank);
  for (std::size_t i = 0; i < ref.size(); ++i) ext[2 * i + 1] = ref[i];
  const std::size_t S = ext.size();
  const auto lp = log_probs.data();
  auto at = [&](std::size_t t, int k) { return lp[t * V + static_cast<std::size_t>(k)]; };
  auto skip_ok = [&](std::size_t s) {  // may jump from s-2 to s
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  std::vector<double> alpha(T * S, kLogZero), beta(T * S, kLogZero);
  alpha[0] = at(0, ext[0]);
  if (S > 1) alpha[1] = at(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kLogZero ? kLogZero : a + at(t, ext[s]);
    }
  }
  double logp = alpha[(T - 1) * S + S - 1];
  if (S > 1) logp = log_add(logp, alpha[(T - 1) * S + S - 2]);

  beta[(T - 1) * S + S - 1] = at(T - 1, ext[S - 1]);
  if (S > 1) beta[(T - 1) * S + S - 2] = at(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && skip_ok(s + 2)) b = log_add(b, beta[(t + 1) * S + s + 2]);
      beta[t * S + s] = b == kLogZero ? kLogZero : b + at(t, ext[s]);
    }
  }

  return Tensor::make_result(
      {1}, {-logp}, {log_probs},
      [T, V, S, ext, alpha = std::move(alpha), beta = std::move(beta),
       logp](hpadapt::detail::Node& self) {
        double* gl = ops::detail::pgrad(self, 0);
        if (!gl) return;
        const double g = self.grad[0];
        const auto& lp = ops::detail::pval(self, 0);
        std::vector<double> acc(V);
        for (std::size_t t = 0; t < T; ++t) {
          std::fill(acc.begin(), acc.end(), kLogZero);
          for (std::size_t s = 0; s < S; ++s) {
            const double ab = alpha[t * S + s] + beta[t * S + s];
            if (ab == kLogZero || std::isnan(ab)) continue;
            const auto k = static_cast<std::size_t>(ext[s]);
            acc[k] = log_add(acc[k], ab);
          }
          for (std::size_t k = 0; k < V; ++k) {
            if (acc[k] == kLogZero) continue;
            gl[t * V + k] -= g * std::exp(acc[k] - lp[t * V + k] - logp);
          }
        }
      },
      "ctc_loss");
}

// Mean teacher-forced cross-entropy over ref followed by the end sentinel.
// Row i of `logits` predicts target i. With smoothing eps the target puts
// 1-eps on the label and eps/(V-1) on every other token.
inline Tensor attention_ce_loss(const Tensor& logits, std::span<const int> ref,
                                int eos, double eps = 0.1) {
  if (logits.rank() != 2 || logits.dim(0) != ref.size() + 1) {
    throw DimensionError("attention_ce_loss: logits " + shape_str(logits.shape()) +
                         " do not match reference length " +
                         std::to_string(ref.size()) + " + end sentinel");
  }
  if (eps < 0.0 || eps >= 1.0) throw InvalidArgument("attention_ce_loss: eps must be in [0,1)");
  const std::size_t L = logits.dim(0), V = logits.dim(1);
  std::vector<int> tgt(ref.begin(), ref.end());
  tgt.push_back(eos);
  for (int y : tgt) {
    if (y < 0 || static_cast<std::size_t>(y) >= V) {
      throw InvalidArgument("attention_ce_loss: target " + std::to_string(y) +
                            " outside vocabulary");
    }
  }
  const double off = V > 1 ? eps / static_cast<double>(V - 1) : 0.0;
  const auto lv = logits.data();
  std::vector<double> logz(L);
  double total = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const double* row = lv.data() + i * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(row[k] - mx);
    logz[i] = mx + std::log(z);
    const auto y = static_cast<std::size_t>(tgt[i]);
    double li = -(1.0 - eps) * (row[y] - logz[i]);
    if (eps > 0.0) {
      for (std::size_t k = 0; k < V; ++k)
        if (k != y) li -= off * (row[k] - logz[i]);
    }
    total += li;
  }
  return Tensor::make_result(
      {1}, {total / static_cast<double>(L)}, {logits},
      [L, V, tgt, logz = std::move(logz), eps, off](hpadapt::detail::Node& self) {
        double* gl = ops::detail::pgrad(self, 0);
        if (!gl) return;
        const double g = self.grad[0] / static_cast<double>(L);
        const auto& lv = ops::detail::pval(self, 0);
        for (std::size_t i = 0; i < L; ++i) {
          const auto y = static_cast<std::size_t>(tgt[i]);
          for (std::size_t k = 0; k < V; ++k) {
            const double p = std::exp(lv[i * V + k] - logz[i]);
            const double q = k == y ? 1.0 - eps : off;
            gl[i * V + k] += g * (p - q);
          }
        }
      },
      "attention_ce_loss");
}

// weight * ctc + (1 - weight) * aed.
inline Tensor hybrid_loss(const Tensor& ctc, const Tensor& aed, double weight = 0.3) {
  if (!(weight >= 0.0 && weight <= 1.0)) {
    throw InvalidArgument("hybrid_loss: weight must lie in [0,1], got " +
                          std::to_string(weight));
  }
  if (weight == 0.0) return aed;
  if (weight == 1.0) return ctc;
  return ops::add(ops::scale(ctc, weight), ops::scale(aed, 1.0 - weight));
}

inline std::size_t edit_distance(std::span<const int> hyp, std::span<const int> ref) {
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

// Edit distance over reference length. An empty reference scores 0 against
// an empty hypothesis and 1 otherwise.
inline double token_error_rate(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) return hyp.empty() ? 0.0 : 1.0;
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

// Corpus-level accumulator: total edits over total reference tokens.
struct ErrorCounts {
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;
  std::size_t utterances = 0;

  void add(std::span<const int> hyp, std::span<const int> ref) {
    edits += edit_distance(hyp, ref);
    ref_tokens += ref.size();
    ++utterances;
  }
  double rate() const {
    return ref_tokens ? static_cast<double>(edits) / static_cast<double>(ref_tokens) : 0.0;
  }
};

struct Hypothesis {
  std::vector<int> tokens;
  bool truncated = false;
};

// Attention-decoder greedy search. `Model` provides
//   Tensor decode_logits(const Tensor& enc, std::span<const int> prefix) const
// returning [prefix.size(), vocab] logits, plus sos_id()/eos_id().
template <class Model>
Hypothesis greedy_decode(const Model& model, const Tensor& enc, std::size_t max_len) {
  NoGradGuard ng;
  Hypothesis h;
  std::vector<int> prefix{model.sos_id()};
  while (true) {
    Tensor logits = model.decode_logits(enc, prefix);
    const std::size_t V = logits.dim(1);
    const auto row = logits.data().subspan((logits.dim(0) - 1) * V, V);
    const int next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == model.eos_id()) break;
    if (h.tokens.size() == max_len) {
      h.truncated = true;
      break;
    }
    h.tokens.push_back(next);
    prefix.push_back(next);
  }
  return h;
}

}  // namespace hpadapt
