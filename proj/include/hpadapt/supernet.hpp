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

// Weight-shared Conformer encoder / Transformer decoder supernet and the
// standalone models derived from it.
//
// Every candidate of a searchable group uses a fixed sub-slice of one shared
// buffer: leading columns (or rows) for FFN and attention widths, centre taps
// for depthwise kernels. The same slice rule serves the mixed forward, the
// one-hot forward and materialization, which keeps extraction lossless.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hpadapt/losses.hpp"
#include "hpadapt/nn.hpp"
#include "hpadapt/space.hpp"

namespace hpadapt {

enum class InitMode { Inherit, Fresh };

inline const char* init_mode_name(InitMode m) { return m == InitMode::Inherit ? "inherit" : "fresh"; }

inline InitMode parse_init_mode(const std::string& s) {
  if (s == "inherit") return InitMode::Inherit;
  if (s == "fresh") return InitMode::Fresh;
  throw InvalidArgument("init mode must be inherit or fresh, got " + s);
}

// Utterances with per-utterance valid lengths. Frames past lengths[i] are
// padding and never reach the model.
struct Batch {
  std::vector<Tensor> features;  // [frames, feat_dim]
  std::vector<std::size_t> lengths;
  std::vector<std::vector<int>> tokens;

  std::size_t size() const { return features.size(); }

  void validate(std::size_t feat_dim) const {
    if (lengths.size() != features.size() || tokens.size() != features.size()) {
      throw DimensionError("batch: " + std::to_string(features.size()) + " feature sequences, " +
                           std::to_string(lengths.size()) + " lengths, " +
                           std::to_string(tokens.size()) + " references");
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto& f = features[i];
      if (f.rank() != 2 || f.dim(1) != feat_dim) {
        throw DimensionError("batch: utterance " + std::to_string(i) + " features " +
                             shape_str(f.shape()) + ", expected [*," + std::to_string(feat_dim) +
                             "]");
      }
      if (lengths[i] == 0 || lengths[i] > f.dim(0)) {
        throw DimensionError("batch: utterance " + std::to_string(i) + " length " +
                             std::to_string(lengths[i]) + " does not fit " +
                             std::to_string(f.dim(0)) + " frames");
      }
    }
  }
};

struct ForwardResult {
  std::vector<Tensor> enc;            // [T/4, D]
  std::vector<Tensor> ctc_log_probs;  // [T/4, V]
  std::vector<Tensor> dec_logits;     // [|y|+1, V]
};

// Hybrid loss averaged over the utterances of a batch.
inline Tensor task_loss(const ForwardResult& r, const Batch& b, const ModelConfig& cfg) {
  std::vector<Tensor> per;
  per.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    per.push_back(hybrid_loss(ctc_loss(r.ctc_log_probs[i], b.tokens[i], cfg.blank_id()),
                              attention_ce_loss(r.dec_logits[i], b.tokens[i], cfg.eos_id(),
                                                cfg.label_smoothing),
                              cfg.ctc_weight));
  }
  return ops::scale(ops::add_n(per), 1.0 / static_cast<double>(per.size()));
}

namespace detail {

enum class Init { Glorot, Kernel, Embedding, Ones, Zeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
  std::size_t slice_axis = 0;  // searchable tensors only
  std::size_t slice_begin = 0;
  bool sliced = false;
};

// Full parameter layout of the network built with `arch`. With the max
// architecture this is the shared supernet layout; slice fields locate each
// tensor inside the corresponding shared tensor.
inline std::vector<ParamSpec> layout(const ModelConfig& cfg, const DerivedArch& arch) {
  const auto& s = cfg.space;
  arch.validate(s);
  const std::size_t D = s.d_model, F = cfg.feat_dim, V = cfg.vocab;
  const auto K = static_cast<std::size_t>(s.max_choice(GroupKind::CK));
  std::vector<ParamSpec> out;
  auto fixed = [&](std::string n, Shape sh, Init i) { out.push_back({std::move(n), std::move(sh), i}); };
  auto cut = [&](std::string n, Shape sh, Init i, std::size_t axis, std::size_t begin = 0) {
    out.push_back({std::move(n), std::move(sh), i, axis, begin, true});
  };
  auto ln = [&](const std::string& n) {
    fixed(n + "_g", {D}, Init::Ones);
    fixed(n + "_b", {D}, Init::Zeros);
  };
  auto ffn = [&](const std::string& m, std::size_t fd) {
    ln(m + ".ln");
    cut(m + ".w1", {D, fd}, Init::Glorot, 1);
    cut(m + ".b1", {fd}, Init::Zeros, 0);
    cut(m + ".w2", {fd, D}, Init::Glorot, 0);
    fixed(m + ".b2", {D}, Init::Zeros);
  };
  auto att = [&](const std::string& m, std::size_t w) {
    ln(m + ".ln");
    for (const char* p : {"q", "k", "v"}) {
      cut(m + ".w" + p, {D, w}, Init::Glorot, 1);
      cut(m + ".b" + p, {w}, Init::Zeros, 0);
    }
    cut(m + ".wo", {w, D}, Init::Glorot, 0);
    fixed(m + ".bo", {D}, Init::Zeros);
  };
  auto get = [&](BlockKind bk, std::size_t b, GroupKind g) {
    return static_cast<std::size_t>(arch.get(s, bk, b, g));
  };

  fixed("frontend.w1", {2 * F, D}, Init::Glorot);
  fixed("frontend.b1", {D}, Init::Zeros);
  fixed("frontend.w2", {2 * D, D}, Init::Glorot);
  fixed("frontend.b2", {D}, Init::Zeros);
  for (std::size_t l = 0; l < s.encoder_blocks; ++l) {
    const std::string m = "enc." + std::to_string(l);
    const auto fd = get(BlockKind::Encoder, l, GroupKind::FD);
    const auto w = get(BlockKind::Encoder, l, GroupKind::AH) * get(BlockKind::Encoder, l, GroupKind::ADIM);
    const auto k = get(BlockKind::Encoder, l, GroupKind::CK);
    ffn(m + ".ff1", fd);
    att(m + ".att", w);
    ln(m + ".conv.ln");
    fixed(m + ".conv.pw1_w", {D, 2 * D}, Init::Glorot);
    fixed(m + ".conv.pw1_b", {2 * D}, Init::Zeros);
    cut(m + ".conv.dw_w", {D, k}, Init::Kernel, 1, (K - k) / 2);
    fixed(m + ".conv.dw_b", {D}, Init::Zeros);
    ln(m + ".conv.ln2");
    fixed(m + ".conv.pw2_w", {D, D}, Init::Glorot);
    fixed(m + ".conv.pw2_b", {D}, Init::Zeros);
    ffn(m + ".ff2", fd);
    ln(m + ".out");
  }
  ln("enc.after");
  fixed("ctc_out.w", {D, V}, Init::Glorot);
  fixed("ctc_out.b", {V}, Init::Zeros);
  fixed("dec.embed", {V, D}, Init::Embedding);
  for (std::size_t l = 0; l < s.decoder_blocks; ++l) {
    const std::string m = "dec." + std::to_string(l);
    att(m + ".self", get(BlockKind::Decoder, l, GroupKind::AH) * get(BlockKind::Decoder, l, GroupKind::ADIM));
    att(m + ".cross",
        get(BlockKind::Decoder, l, GroupKind::XAH) * get(BlockKind::Decoder, l, GroupKind::XADIM));
    ffn(m + ".ff", get(BlockKind::Decoder, l, GroupKind::FD));
  }
  ln("dec.after");
  fixed("dec_out.w", {D, V}, Init::Glorot);
  fixed("dec_out.b", {V}, Init::Zeros);
  return out;
}

inline ParamSet init_params(const std::vector<ParamSpec>& specs, Rng& rng) {
  ParamSet p;
  for (const auto& sp : specs) {
    switch (sp.init) {
      case Init::Glorot: p.add(sp.name, nn::glorot(sp.shape[0], sp.shape[1], rng)); break;
      case Init::Kernel:
        p.add(sp.name, nn::uniform_param(sp.shape, 1.0 / std::sqrt(static_cast<double>(sp.shape[1])), rng));
        break;
      case Init::Embedding: p.add(sp.name, nn::uniform_param(sp.shape, 1.0, rng)); break;
      case Init::Ones: p.add(sp.name, nn::ones_param(sp.shape[0])); break;
      case Init::Zeros: p.add(sp.name, nn::zeros_param(sp.shape[0])); break;
    }
  }
  return p;
}

// Slices of `shared` for every spec; on the tape, so gradients reach the
// shared tensors.
inline ParamSet slice_params(const ParamSet& shared, const std::vector<ParamSpec>& specs) {
  ParamSet p;
  for (const auto& sp : specs) {
    const Tensor& full = shared.at(sp.name);
    if (!sp.sliced || full.shape() == sp.shape) {
      p.add(sp.name, full);
    } else {
      p.add(sp.name, ops::slice(full, sp.slice_axis, sp.slice_begin,
                                sp.slice_begin + sp.shape[sp.slice_axis]));
    }
  }
  return p;
}

inline void check_shapes(const ParamSet& p, const std::vector<ParamSpec>& specs,
                         const std::string& what) {
  if (p.size() != specs.size()) {
    throw IncompatibleCheckpoint(what + ": expected " + std::to_string(specs.size()) +
                                 " tensors, got " + std::to_string(p.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, t] = p.items()[i];
    if (name != specs[i].name || t.shape() != specs[i].shape) {
      throw IncompatibleCheckpoint(what + ": tensor " + std::to_string(i) + " is " + name + " " +
                                   shape_str(t.shape()) + ", expected " + specs[i].name + " " +
                                   shape_str(specs[i].shape));
    }
  }
}

// Forward pass with one concrete width per group; `p` holds tensors already
// sized to `arch`.
struct ConcreteBlocks {
  const ModelConfig& cfg;
  const DerivedArch& arch;
  const ParamSet& p;

  int choice(BlockKind bk, std::size_t b, GroupKind g) const { return arch.get(cfg.space, bk, b, g); }

  Tensor ffn(const Tensor& x, const std::string& m, BlockKind, std::size_t) const {
    return nn::feed_forward(x, p, m);
  }
  Tensor attention(const Tensor& xq, const Tensor& xkv, const std::string& m, BlockKind bk,
                   std::size_t b, bool cross, bool causal) const {
    const auto h = static_cast<std::size_t>(choice(bk, b, cross ? GroupKind::XAH : GroupKind::AH));
    const auto a = static_cast<std::size_t>(choice(bk, b, cross ? GroupKind::XADIM : GroupKind::ADIM));
    return nn::attention(xq, xkv, p, m, h, a, causal);
  }
  Tensor kernel(const std::string& m, std::size_t) const { return p.at(m + ".dw_w"); }
};

// Forward pass where every searchable sub-module returns the λ-weighted sum
// of its candidate outputs, computed exactly in one pass:
//  FFN:       hidden unit j scaled by Σ_{i: fd_i > j} λ_i.
//  attention: for each head dim a, all max(AH) heads are computed and head k
//             scaled by Σ_{i: ah_i > k} λ_AH[i]; the per-a outputs are then
//             weighted by λ_ADIM[a]. Biases of the output projection enter once.
//  conv:      the depthwise kernel is Σ_i λ_i (candidate i's centre taps, zero
//             padded to max width), since convolution is linear in the kernel.
struct MixedBlocks {
  const ModelConfig& cfg;
  const ParamSet& p;
  const std::vector<Tensor>& lambdas;
  std::vector<Tensor> fd_mask;                 // per group (FD groups only)
  std::vector<std::vector<Tensor>> head_mask;  // per AH group, per ADIM index
  std::vector<Tensor> mixed_kernel;            // per encoder block

  // [choices] -> [width] with entry j = Σ_{i: cover(i, j)} λ_i.
  static Tensor cover_mask(const Tensor& lam, std::size_t width,
                           const std::function<bool(std::size_t, std::size_t)>& cover) {
    const std::size_t n = lam.numel();
    std::vector<double> m(n * width, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < width; ++j) m[i * width + j] = cover(i, j) ? 1.0 : 0.0;
    return ops::reshape(ops::matmul(ops::reshape(lam, {1, n}), Tensor({n, width}, std::move(m))),
                        {width});
  }

  MixedBlocks(const ModelConfig& c, const ParamSet& shared, const std::vector<Tensor>& lam)
      : cfg(c), p(shared), lambdas(lam) {
    const auto& s = cfg.space;
    const auto groups = s.groups();
    fd_mask.resize(groups.size());
    head_mask.resize(groups.size());
    const auto H = static_cast<std::size_t>(s.max_choice(GroupKind::AH));
    const auto K = static_cast<std::size_t>(s.max_choice(GroupKind::CK));
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& choices = s.choices(groups[g].kind);
      switch (groups[g].kind) {
        case GroupKind::FD:
          fd_mask[g] = cover_mask(lam[g], static_cast<std::size_t>(choices.back()),
                                  [&](std::size_t i, std::size_t j) {
                                    return j < static_cast<std::size_t>(choices[i]);
                                  });
          break;
        case GroupKind::AH:
        case GroupKind::XAH:
          for (int a : s.adim) {
            const auto ua = static_cast<std::size_t>(a);
            head_mask[g].push_back(cover_mask(lam[g], H * ua, [&](std::size_t i, std::size_t j) {
              return j / ua < static_cast<std::size_t>(choices[i]);
            }));
          }
          break;
        case GroupKind::CK: {
          const Tensor taps = cover_mask(lam[g], K, [&](std::size_t i, std::size_t j) {
            const auto k = static_cast<std::size_t>(choices[i]);
            return j >= (K - k) / 2 && j < (K + k) / 2;
          });
          mixed_kernel.push_back(ops::mul(
              p.at("enc." + std::to_string(groups[g].block) + ".conv.dw_w"), taps));
          break;
        }
        default: break;
      }
    }
  }

  Tensor ffn(const Tensor& x, const std::string& m, BlockKind bk, std::size_t b) const {
    return nn::feed_forward(x, p, m, fd_mask[cfg.space.group_index(bk, b, GroupKind::FD)]);
  }

  Tensor attention(const Tensor& xq, const Tensor& xkv, const std::string& m, BlockKind bk,
                   std::size_t b, bool cross, bool causal) const {
    const auto& s = cfg.space;
    const std::size_t gh = s.group_index(bk, b, cross ? GroupKind::XAH : GroupKind::AH);
    const std::size_t ga = s.group_index(bk, b, cross ? GroupKind::XADIM : GroupKind::ADIM);
    const auto H = static_cast<std::size_t>(s.max_choice(GroupKind::AH));
    const Tensor q_in = nn::norm(xq, p, m + ".ln");
    const Tensor kv_in = (&xq == &xkv) ? q_in : xkv;
    const auto pr = nn::project_qkv(q_in, kv_in, p, m);
    const Tensor& wo = p.at(m + ".wo");
    std::vector<Tensor> terms;
    for (std::size_t j = 0; j < s.adim.size(); ++j) {
      const auto a = static_cast<std::size_t>(s.adim[j]);
      const std::size_t w = H * a;
      const bool full = w == pr.q.dim(1);
      nn::Projections sub = full ? pr
                                 : nn::Projections{ops::slice(pr.q, 1, 0, w), ops::slice(pr.k, 1, 0, w),
                                                   ops::slice(pr.v, 1, 0, w)};
      Tensor ctx = ops::mul(nn::attend_heads(sub, H, a, causal), head_mask[gh][j]);
      Tensor out = ops::matmul(ctx, full ? wo : ops::slice(wo, 0, 0, w));
      terms.push_back(ops::scale(out, ops::slice(lambdas[ga], 0, j, j + 1)));
    }
    return ops::add(ops::add_n(terms), p.at(m + ".bo"));
  }

  Tensor kernel(const std::string&, std::size_t block) const { return mixed_kernel[block]; }
};

template <class Blocks>
Tensor encode(const Blocks& blk, const ParamSet& p, const ModelConfig& cfg, const Tensor& feats) {
  Tensor x = nn::subsample(feats, p);
  for (std::size_t l = 0; l < cfg.space.encoder_blocks; ++l) {
    const std::string m = "enc." + std::to_string(l);
    x = ops::add(x, ops::scale(blk.ffn(x, m + ".ff1", BlockKind::Encoder, l), 0.5));
    x = ops::add(x, blk.attention(x, x, m + ".att", BlockKind::Encoder, l, false, false));
    x = ops::add(x, nn::conv_module(x, p, m + ".conv", blk.kernel(m + ".conv", l)));
    x = ops::add(x, ops::scale(blk.ffn(x, m + ".ff2", BlockKind::Encoder, l), 0.5));
    x = nn::norm(x, p, m + ".out");
  }
  return nn::norm(x, p, "enc.after");
}

template <class Blocks>
Tensor decode(const Blocks& blk, const ParamSet& p, const ModelConfig& cfg, const Tensor& enc,
              std::span<const int> prefix) {
  Tensor x = ops::add(ops::embedding(p.at("dec.embed"), prefix),
                      nn::sinusoidal_positions(prefix.size(), cfg.space.d_model));
  for (std::size_t l = 0; l < cfg.space.decoder_blocks; ++l) {
    const std::string m = "dec." + std::to_string(l);
    x = ops::add(x, blk.attention(x, x, m + ".self", BlockKind::Decoder, l, false, true));
    x = ops::add(x, blk.attention(x, enc, m + ".cross", BlockKind::Decoder, l, true, false));
    x = ops::add(x, blk.ffn(x, m + ".ff", BlockKind::Decoder, l));
  }
  return nn::linear(nn::norm(x, p, "dec.after"), p.at("dec_out.w"), p.at("dec_out.b"));
}

inline Tensor valid_frames(const Batch& b, std::size_t i) {
  const Tensor& f = b.features[i];
  return b.lengths[i] == f.dim(0) ? f : ops::slice(f, 0, 0, b.lengths[i]);
}

template <class Blocks>
ForwardResult forward_batch(const Blocks& blk, const ParamSet& p, const ModelConfig& cfg,
                            const Batch& b) {
  b.validate(cfg.feat_dim);
  ForwardResult r;
  for (std::size_t i = 0; i < b.size(); ++i) {
    Tensor enc = encode(blk, p, cfg, valid_frames(b, i));
    r.ctc_log_probs.push_back(
        ops::log_softmax(nn::linear(enc, p.at("ctc_out.w"), p.at("ctc_out.b")), 1));
    std::vector<int> prefix{cfg.sos_id()};
    prefix.insert(prefix.end(), b.tokens[i].begin(), b.tokens[i].end());
    r.dec_logits.push_back(decode(blk, p, cfg, enc, prefix));
    r.enc.push_back(std::move(enc));
  }
  return r;
}

}  // namespace detail

// Checks that λ has one nonnegative, normalized vector per group.
inline void validate_mixing_weights(const ArchSpace& s, const std::vector<Tensor>& lambdas) {
  const auto groups = s.groups();
  if (lambdas.size() != groups.size()) {
    throw InvalidArgument("mixing weights: " + std::to_string(lambdas.size()) +
                          " vectors for " + std::to_string(groups.size()) + " groups");
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto n = s.choices(groups[g].kind).size();
    if (lambdas[g].rank() != 1 || lambdas[g].numel() != n) {
      throw InvalidArgument("mixing weights for " + groups[g].name() + " have shape " +
                            shape_str(lambdas[g].shape()) + ", expected [" + std::to_string(n) + "]");
    }
    double sum = 0.0;
    for (double v : lambdas[g].data()) {
      if (!(v >= 0.0)) throw InvalidArgument("mixing weights for " + groups[g].name() + " are negative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvalidArgument("mixing weights for " + groups[g].name() + " sum to " +
                            std::to_string(sum));
    }
  }
}

// One-hot mixing weights selecting `arch`.
inline std::vector<Tensor> one_hot_weights(const ArchSpace& s, const DerivedArch& arch) {
  arch.validate(s);
  std::vector<Tensor> out;
  const auto groups = s.groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<double> v(s.choices(groups[g].kind).size(), 0.0);
    v[arch.index_of(s, g)] = 1.0;
    out.emplace_back(Shape{v.size()}, std::move(v));
  }
  return out;
}

class Supernet {
 public:
  Supernet(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    weights_ = detail::init_params(shared_layout(), rng);
  }

  // Adopts existing shared weights (e.g. from a checkpoint).
  Supernet(ModelConfig cfg, ParamSet weights) : cfg_(std::move(cfg)), weights_(std::move(weights)) {
    cfg_.validate();
    detail::check_shapes(weights_, shared_layout(), "supernet weights");
  }

  const ModelConfig& config() const { return cfg_; }
  const ArchSpace& space() const { return cfg_.space; }
  ParamSet& weights() { return weights_; }
  const ParamSet& weights() const { return weights_; }

  ForwardResult mixed_forward(const Batch& b, const std::vector<Tensor>& lambdas) const {
    validate_mixing_weights(cfg_.space, lambdas);
    b.validate(cfg_.feat_dim);
    detail::MixedBlocks blk(cfg_, weights_, lambdas);
    return detail::forward_batch(blk, weights_, cfg_, b);
  }

  ForwardResult one_hot_forward(const Batch& b, const DerivedArch& arch) const {
    const auto p = derive_weights(arch);
    detail::ConcreteBlocks blk{cfg_, arch, p};
    return detail::forward_batch(blk, p, cfg_, b);
  }

  // Sliced views of the shared weights for `arch` (gradients flow back).
  ParamSet derive_weights(const DerivedArch& arch) const {
    return detail::slice_params(weights_, detail::layout(cfg_, arch));
  }

 private:
  std::vector<detail::ParamSpec> shared_layout() const {
    return detail::layout(cfg_, DerivedArch::max_of(cfg_.space));
  }

  ModelConfig cfg_;
  ParamSet weights_;
};

// Standalone network for one DerivedArch.
class ConformerModel {
 public:
  ConformerModel(ModelConfig cfg, DerivedArch arch, ParamSet params)
      : cfg_(std::move(cfg)), arch_(std::move(arch)), params_(std::move(params)) {
    cfg_.validate();
    detail::check_shapes(params_, detail::layout(cfg_, arch_), "model weights");
  }

  static ConformerModel fresh(const ModelConfig& cfg, const DerivedArch& arch, Rng& rng) {
    return ConformerModel(cfg, arch, detail::init_params(detail::layout(cfg, arch), rng));
  }

  const ModelConfig& config() const { return cfg_; }
  const DerivedArch& arch() const { return arch_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t param_count() const { return params_.total_numel(); }

  ForwardResult forward(const Batch& b) const {
    detail::ConcreteBlocks blk{cfg_, arch_, params_};
    return detail::forward_batch(blk, params_, cfg_, b);
  }

  Tensor encode(const Tensor& feats) const {
    detail::ConcreteBlocks blk{cfg_, arch_, params_};
    return detail::encode(blk, params_, cfg_, feats);
  }

  Tensor decode_logits(const Tensor& enc, std::span<const int> prefix) const {
    detail::ConcreteBlocks blk{cfg_, arch_, params_};
    return detail::decode(blk, params_, cfg_, enc, prefix);
  }

  int sos_id() const { return cfg_.sos_id(); }
  int eos_id() const { return cfg_.eos_id(); }

  // Greedy attention decoding of one utterance's valid frames.
  Hypothesis recognize(const Tensor& feats) const {
    NoGradGuard ng;
    const Tensor enc = encode(feats);
    return greedy_decode(*this, enc, enc.dim(0));
  }

 private:
  ModelConfig cfg_;
  DerivedArch arch_;
  ParamSet params_;
};

// Inherit copies the shared slices (detached); fresh redraws every tensor.
inline ConformerModel materialize(const Supernet& net, const DerivedArch& arch, InitMode init,
                                  Rng& rng) {
  arch.validate(net.space());
  if (init == InitMode::Fresh) return ConformerModel::fresh(net.config(), arch, rng);
  ParamSet sliced;
  {
    NoGradGuard ng;
    sliced = net.derive_weights(arch).clone(true);
  }
  return ConformerModel(net.config(), arch, std::move(sliced));
}

}  // namespace hpadapt
