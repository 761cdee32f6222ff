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

// Brute-force CTC: enumerate every frame-level path, collapse it, and sum
// the probabilities of paths that collapse to the reference.

#include <cmath>
#include <vector>

namespace hpadapt::oracle {

inline std::vector<int> ctc_collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != blank) out.push_back(k);
    prev = k;
  }
  return out;
}

// log_probs row-major [T, V]; returns -log sum over matching paths
// (+inf when no path matches).
inline double ctc_brute_force(const std::vector<double>& log_probs, std::size_t T,
                              std::size_t V, const std::vector<int>& ref,
                              int blank = 0) {
  std::vector<int> path(T, 0);
  double total = 0.0;
  std::size_t count = 1;
  for (std::size_t t = 0; t < T; ++t) count *= V;
  for (std::size_t code = 0; code < count; ++code) {
    std::size_t c = code;
    double lp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = static_cast<int>(c % V);
      c /= V;
      lp += log_probs[t * V + static_cast<std::size_t>(path[t])];
    }
    if (ctc_collapse(path, blank) == ref) total += std::exp(lp);
  }
  return -std::log(total);
}

}  // namespace hpadapt::oracle
