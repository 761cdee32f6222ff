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

// Forward ops and their gradient rules. Broadcasting is limited to
// leading-batch expansion: a right operand whose shape equals the trailing
// dims of the left operand is repeated over the leading dims.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hpadapt/tensor.hpp"

namespace hpadapt::ops {

namespace detail {

using hpadapt::detail::Node;

inline double* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buf() : nullptr;
}

inline const std::vector<double>& pval(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

[[noreturn]] inline void mismatch(const char* op, const Shape& a,
                                  const Shape& b) {
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " do not conform");
}

// True iff b equals a or a trailing suffix of a.
inline bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    detail::mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* br = B + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return Tensor::make_result(
      {m, n}, std::move(out), {a, b},
      [m, k, n](detail::Node& self) {
        const double* g = self.grad.data();
        const auto& av = detail::pval(self, 0);
        const auto& bv = detail::pval(self, 1);
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double* br = bv.data() + p * n;
              const double* gr = g + i * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (double* gb = detail::pgrad(self, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* gr = g + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double a_ip = av[i * k + p];
              if (a_ip == 0.0) continue;
              double* gbr = gb + p * n;
              for (std::size_t j = 0; j < n; ++j) gbr[j] += a_ip * gr[j];
            }
          }
        }
      },
      "matmul");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!detail::broadcastable(a.shape(), b.shape())) {
    detail::mismatch("add", a.shape(), b.shape());
  }
  const std::size_t inner = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [inner](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (double* gb = detail::pgrad(self, 1)) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
        }
      },
      "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!detail::broadcastable(a.shape(), b.shape())) {
    detail::mismatch("sub", a.shape(), b.shape());
  }
  const std::size_t inner = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % inner];
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [inner](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (double* gb = detail::pgrad(self, 1)) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] -= g[i];
        }
      },
      "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (!detail::broadcastable(a.shape(), b.shape())) {
    detail::mismatch("mul", a.shape(), b.shape());
  }
  const std::size_t inner = b.numel();
  std::vector<double> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % inner];
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [inner](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = detail::pval(self, 0);
        const auto& bv = detail::pval(self, 1);
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % inner];
        }
        if (double* gb = detail::pgrad(self, 1)) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i] * av[i];
        }
      },
      "mul");
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [c](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        }
      },
      "scale");
}

// Multiplies every element of `a` by the single element of `s`.
inline Tensor scale(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) detail::mismatch("scale", a.shape(), s.shape());
  const double c = s[0];
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return Tensor::make_result(
      a.shape(), std::move(out), {a, s},
      [](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = detail::pval(self, 0);
        const double c = detail::pval(self, 1)[0];
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        }
        if (double* gs = detail::pgrad(self, 1)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
          gs[0] += acc;
        }
      },
      "scale");
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += c;
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      },
      "add_scalar");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) detail::mismatch("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(
      std::move(shape), std::move(out), {a},
      [](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      },
      "reshape");
}

// Half-open range [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
                    std::size_t end) {
  auto sp = detail::split_axis(a.shape(), axis, "slice");
  if (begin >= end || end > sp.n) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for shape " +
                         shape_str(a.shape()) + " axis " + std::to_string(axis));
  }
  const std::size_t len = end - begin;
  Shape shape = a.shape();
  shape[axis] = len;
  std::vector<double> out(sp.outer * len * sp.inner);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = av.data() + (o * sp.n + begin) * sp.inner;
    std::copy(src, src + len * sp.inner, out.data() + o * len * sp.inner);
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), {a},
      [sp, begin, len](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t o = 0; o < sp.outer; ++o) {
            double* dst = ga + (o * sp.n + begin) * sp.inner;
            const double* src = g.data() + o * len * sp.inner;
            for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
          }
        }
      },
      "slice");
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: no operands");
  const Shape& s0 = parts[0].shape();
  auto sp0 = detail::split_axis(s0, axis, "concat");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) ok = false;
    }
    if (!ok) detail::mismatch("concat", s0, s);
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = s0;
  shape[axis] = total;
  std::vector<double> out(sp0.outer * total * sp0.inner);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t o = 0; o < sp0.outer; ++o) {
      std::copy(pv.data() + o * lens[k] * sp0.inner,
                pv.data() + (o + 1) * lens[k] * sp0.inner,
                out.data() + (o * total + off) * sp0.inner);
    }
    off += lens[k];
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), parts,
      [sp0, lens, total](detail::Node& self) {
        const auto& g = self.grad;
        std::size_t off = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
          if (double* gp = detail::pgrad(self, k)) {
            for (std::size_t o = 0; o < sp0.outer; ++o) {
              const double* src = g.data() + (o * total + off) * sp0.inner;
              double* dst = gp + o * lens[k] * sp0.inner;
              for (std::size_t i = 0; i < lens[k] * sp0.inner; ++i) dst[i] += src[i];
            }
          }
          off += lens[k];
        }
      },
      "concat");
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Tensor::make_result(
      {c, r}, std::move(out), {a},
      [r, c](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        }
      },
      "transpose");
}

inline Tensor softmax(const Tensor& a, std::size_t axis) {
  auto sp = detail::split_axis(a.shape(), axis, "softmax");
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, av[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(av[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
    }
  }
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [sp](detail::Node& self) {
        const auto& g = self.grad;
        const auto& y = self.value;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
              const std::size_t base = o * sp.n * sp.inner + in;
              double dot = 0.0;
              for (std::size_t k = 0; k < sp.n; ++k) {
                const std::size_t i = base + k * sp.inner;
                dot += g[i] * y[i];
              }
              for (std::size_t k = 0; k < sp.n; ++k) {
                const std::size_t i = base + k * sp.inner;
                ga[i] += y[i] * (g[i] - dot);
              }
            }
          }
        }
      },
      "softmax");
}

inline Tensor log_softmax(const Tensor& a, std::size_t axis) {
  auto sp = detail::split_axis(a.shape(), axis, "log_softmax");
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, av[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) z += std::exp(av[base + k * sp.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t k = 0; k < sp.n; ++k) {
        out[base + k * sp.inner] = av[base + k * sp.inner] - lz;
      }
    }
  }
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [sp](detail::Node& self) {
        const auto& g = self.grad;
        const auto& y = self.value;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
              const std::size_t base = o * sp.n * sp.inner + in;
              double gs = 0.0;
              for (std::size_t k = 0; k < sp.n; ++k) gs += g[base + k * sp.inner];
              for (std::size_t k = 0; k < sp.n; ++k) {
                const std::size_t i = base + k * sp.inner;
                ga[i] += g[i] - std::exp(y[i]) * gs;
              }
            }
          }
        }
      },
      "log_softmax");
}

// Reduces `axis`; a rank-1 input yields shape [1].
inline Tensor logsumexp(const Tensor& a, std::size_t axis) {
  auto sp = detail::split_axis(a.shape(), axis, "logsumexp");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  std::vector<double> out(sp.outer * sp.inner);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, av[base + k * sp.inner]);
      if (std::isinf(mx)) {
        out[o * sp.inner + in] = mx;
        continue;
      }
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) z += std::exp(av[base + k * sp.inner] - mx);
      out[o * sp.inner + in] = mx + std::log(z);
    }
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), {a},
      [sp](detail::Node& self) {
        const auto& g = self.grad;
        const auto& y = self.value;
        const auto& av = detail::pval(self, 0);
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
              const std::size_t r = o * sp.inner + in;
              if (std::isinf(y[r])) continue;
              const std::size_t base = o * sp.n * sp.inner + in;
              for (std::size_t k = 0; k < sp.n; ++k) {
                const std::size_t i = base + k * sp.inner;
                ga[i] += g[r] * std::exp(av[i] - y[r]);
              }
            }
          }
        }
      },
      "logsumexp");
}

// Normalizes over the last dim, then applies gain and bias of that width.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    detail::mismatch("layer_norm", x.shape(), gamma.shape());
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv(rows);
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mean) * inv[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv = std::move(inv)](detail::Node& self) {
        const auto& g = self.grad;
        const auto& gv = detail::pval(self, 1);
        double* gx = detail::pgrad(self, 0);
        double* gg = detail::pgrad(self, 1);
        double* gb = detail::pgrad(self, 2);
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* xh = xhat.data() + r * d;
          if (gg || gb) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) gg[j] += gr[j] * xh[j];
              if (gb) gb[j] += gr[j];
            }
          }
          if (gx) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = gr[j] * gv[j];
              s1 += gh;
              s2 += gh * xh[j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = gr[j] * gv[j];
              gx[r * d + j] += inv[r] / dd * (dd * gh - s1 - xh[j] * s2);
            }
          }
        }
      },
      "layer_norm");
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(av[i]);
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [](detail::Node& self) {
        const auto& g = self.grad;
        const auto& y = self.value;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        }
      },
      "sigmoid");
}

// x * sigmoid(x)
inline Tensor swish(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * detail::sigmoid(av[i]);
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = detail::pval(self, 0);
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = detail::sigmoid(av[i]);
            ga[i] += g[i] * (s + av[i] * s * (1.0 - s));
          }
        }
      },
      "swish");
}

// NaN passes through so that divergence stays visible downstream.
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0 || std::isnan(av[i]) ? av[i] : 0.0;
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = detail::pval(self, 0);
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > 0 ? g[i] : 0.0;
        }
      },
      "relu");
}

// Gated linear unit over the last dim: first half * sigmoid(second half).
inline Tensor glu(const Tensor& a) {
  const std::size_t w = a.shape().back();
  if (w % 2 != 0) {
    throw DimensionError("glu: last dim must be even, got " + shape_str(a.shape()));
  }
  const std::size_t h = w / 2, rows = a.numel() / w;
  Shape shape = a.shape();
  shape.back() = h;
  std::vector<double> out(rows * h);
  const auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < h; ++j)
      out[r * h + j] = av[r * w + j] * detail::sigmoid(av[r * w + h + j]);
  return Tensor::make_result(
      std::move(shape), std::move(out), {a},
      [rows, h, w](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = detail::pval(self, 0);
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < h; ++j) {
              const double x1 = av[r * w + j];
              const double s = detail::sigmoid(av[r * w + h + j]);
              ga[r * w + j] += g[r * h + j] * s;
              ga[r * w + h + j] += g[r * h + j] * x1 * s * (1.0 - s);
            }
          }
        }
      },
      "glu");
}

// x: [T, C], kernel: [C, K] with K odd. Zero same-padding centred on each
// frame, so the output keeps T frames for every kernel width.
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 2 || kernel.rank() != 2 || kernel.dim(0) != x.dim(1)) {
    detail::mismatch("depthwise_conv1d", x.shape(), kernel.shape());
  }
  const std::size_t T = x.dim(0), C = x.dim(1), K = kernel.dim(1);
  if (K % 2 == 0) {
    throw InvalidArgument("depthwise_conv1d: kernel width must be odd, got " +
                          std::to_string(K));
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(K / 2);
  std::vector<double> out(T * C, 0.0);
  const auto xv = x.data();
  const auto kv = kernel.data();
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                 static_cast<std::ptrdiff_t>(j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const double* xr = xv.data() + static_cast<std::size_t>(src) * C;
      double* o = out.data() + t * C;
      for (std::size_t c = 0; c < C; ++c) o[c] += kv[c * K + j] * xr[c];
    }
  }
  return Tensor::make_result(
      {T, C}, std::move(out), {x, kernel},
      [T, C, K, half](detail::Node& self) {
        const auto& g = self.grad;
        const auto& xv = detail::pval(self, 0);
        const auto& kv = detail::pval(self, 1);
        double* gx = detail::pgrad(self, 0);
        double* gk = detail::pgrad(self, 1);
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t j = 0; j < K; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                       static_cast<std::ptrdiff_t>(j) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            const std::size_t s = static_cast<std::size_t>(src);
            const double* gr = g.data() + t * C;
            for (std::size_t c = 0; c < C; ++c) {
              if (gx) gx[s * C + c] += gr[c] * kv[c * K + j];
              if (gk) gk[c * K + j] += gr[c] * xv[s * C + c];
            }
          }
        }
      },
      "depthwise_conv1d");
}

// Rows of `table` ([V, D]) selected by `ids`; result [ids.size(), D].
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding: table must be rank 2, got " +
                         shape_str(table.shape()));
  }
  if (ids.empty()) throw InvalidArgument("embedding: empty id list");
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * D);
  const auto tv = table.data();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= V) {
      throw InvalidArgument("embedding: id " + std::to_string(idv[i]) +
                            " outside vocabulary of " + std::to_string(V));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(idv[i]) * D, D,
                out.data() + i * D);
  }
  return Tensor::make_result(
      {idv.size(), D}, std::move(out), {table},
      [idv, D](detail::Node& self) {
        const auto& g = self.grad;
        if (double* gt = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < idv.size(); ++i) {
            double* dst = gt + static_cast<std::size_t>(idv[i]) * D;
            for (std::size_t j = 0; j < D; ++j) dst[j] += g[i * D + j];
          }
        }
      },
      "embedding");
}

// Replaces entries where mask is true; masked entries receive no gradient.
inline Tensor masked_fill(const Tensor& a, const std::vector<bool>& mask,
                          double value) {
  if (mask.size() != a.numel()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) +
                         " entries for shape " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [mask](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::pgrad(self, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i)
            if (!mask[i]) ga[i] += g[i];
        }
      },
      "masked_fill");
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result(
      {1}, {s}, {a},
      [](detail::Node& self) {
        const double g = self.grad[0];
        if (double* ga = detail::pgrad(self, 0)) {
          const std::size_t n = self.parents[0]->value.size();
          for (std::size_t i = 0; i < n; ++i) ga[i] += g;
        }
      },
      "sum");
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Sum of a list of same-shape tensors in list order.
inline Tensor add_n(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw InvalidArgument("add_n: no operands");
  Tensor acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].shape() != acc.shape()) detail::mismatch("add_n", acc.shape(), xs[i].shape());
    acc = add(acc, xs[i]);
  }
  return acc;
}

}  // namespace hpadapt::ops
