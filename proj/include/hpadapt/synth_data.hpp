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

// Deterministic synthetic bi-domain corpus.
//
// Every token owns a smooth prototype trajectory over the feature channels.
// An utterance is a Markov token sequence (no immediate repeats) laid out
// over its frames with short silences at both ends; each token segment
// replays its prototype at normalized time u^tempo, then the domain's channel
// affine warp and Gaussian noise are applied. Prototypes and the grammar come
// from `prototype_seed`, so two domains built with the same value share
// tokens and differ only in length, tempo and channel statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hpadapt/binary_io.hpp"
#include "hpadapt/errors.hpp"
#include "hpadapt/rng.hpp"
#include "hpadapt/supernet.hpp"

namespace hpadapt {

enum class Split { Train, Heldout, Dev, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Heldout: return "heldout";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  for (auto v : {Split::Train, Split::Heldout, Split::Dev, Split::Test})
    if (s == split_name(v)) return v;
  throw InvalidArgument("unknown split " + s);
}

struct DomainSpec {
  std::string name = "source";
  double mean_frames = 120.0;
  double length_dispersion = 0.2;  // std of log-length
  std::size_t min_tokens = 6;
  std::size_t max_tokens = 12;
  double duration_jitter = 0.25;  // relative spread of segment durations
  double tempo = 1.0;          // within-token time warp u -> u^tempo
  double channel_shift = 0.0;  // shift_c = channel_shift + channel_tilt * (c/(F-1) - 1/2)
  double channel_tilt = 0.0;
  double channel_scale = 1.0;
  double noise = 0.3;
  std::size_t feat_dim = 16;
  std::size_t vocab = 8;  // blank + real tokens + sentinel
  std::uint64_t prototype_seed = 1234;
  std::uint64_t seed = 1;

  bool operator==(const DomainSpec&) const = default;

  void validate() const {
    if (!(mean_frames >= 4.0)) throw ConfigError("mean_frames", "must be at least 4");
    if (!(length_dispersion >= 0.0)) throw ConfigError("length_dispersion", "must be nonnegative");
    if (min_tokens == 0 || max_tokens < min_tokens)
      throw ConfigError("min_tokens", "need 1 <= min_tokens <= max_tokens");
    if (!(duration_jitter >= 0.0 && duration_jitter < 1.0))
      throw ConfigError("duration_jitter", "must lie in [0,1)");
    if (!(tempo > 0.0)) throw ConfigError("tempo", "must be positive");
    if (!(channel_scale > 0.0)) throw ConfigError("channel_scale", "must be positive (invertible warp)");
    if (!(noise >= 0.0)) throw ConfigError("noise", "must be nonnegative");
    if (feat_dim == 0) throw ConfigError("feat_dim", "must be positive");
    if (vocab < 4) throw ConfigError("vocab", "needs blank, sentinel and at least two tokens");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DomainSpec, name, mean_frames, length_dispersion, min_tokens,
                                   max_tokens, duration_jitter, tempo, channel_shift, channel_tilt, channel_scale,
                                   noise, feat_dim, vocab, prototype_seed, seed)

struct SplitCounts {
  std::size_t train = 200;
  std::size_t dev = 40;
  std::size_t test = 40;
  double heldout_fraction = 0.1;  // carved from train

  bool operator==(const SplitCounts&) const = default;

  void validate() const {
    if (train == 0) throw ConfigError("train", "must be positive");
    if (dev == 0) throw ConfigError("dev", "must be positive");
    if (test == 0) throw ConfigError("test", "must be positive");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0))
      throw ConfigError("heldout_fraction", "must lie in (0,1)");
    if (heldout_count() == 0 || heldout_count() >= train)
      throw ConfigError("heldout_fraction", "leaves an empty train or held-out split");
  }

  std::size_t heldout_count() const {
    return static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(train)));
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SplitCounts, train, dev, test, heldout_fraction)

struct Utterance {
  std::string id;
  std::string domain;
  Split split = Split::Train;
  std::vector<int> tokens;
  std::size_t frames = 0;
  std::size_t feat_dim = 0;
  std::vector<double> features;  // row-major [frames, feat_dim]

  bool operator==(const Utterance&) const = default;

  Tensor feature_tensor() const { return Tensor({frames, feat_dim}, features); }
};

// CTC feasibility after 4x subsampling, with room for the end sentinel.
inline std::size_t min_frames_for(std::size_t tokens) { return 4 * (tokens + 1); }

struct Corpus {
  DomainSpec spec;
  SplitCounts counts;
  std::vector<Utterance> utterances;

  bool operator==(const Corpus&) const = default;

  std::vector<const Utterance*> split(Split s) const {
    std::vector<const Utterance*> out;
    for (const auto& u : utterances)
      if (u.split == s) out.push_back(&u);
    return out;
  }

  double mean_frames() const {
    double s = 0.0;
    for (const auto& u : utterances) s += static_cast<double>(u.frames);
    return utterances.empty() ? 0.0 : s / static_cast<double>(utterances.size());
  }
};

inline Batch make_batch(const std::vector<const Utterance*>& utts) {
  Batch b;
  for (const auto* u : utts) {
    b.features.push_back(u->feature_tensor());
    b.lengths.push_back(u->frames);
    b.tokens.push_back(u->tokens);
  }
  return b;
}

namespace detail {

struct Prototype {
  std::vector<double> amp, freq, phase, offset;  // per channel
};

struct Grammar {
  std::vector<Prototype> protos;               // index k-1 for token k
  std::vector<std::vector<double>> transition;  // rows: previous token (0 = start)
};

inline Grammar make_grammar(const DomainSpec& s) {
  Rng rng(s.prototype_seed);
  const std::size_t n = s.vocab - 2;  // real tokens 1..vocab-2
  Grammar g;
  for (std::size_t k = 0; k < n; ++k) {
    Prototype p;
    for (std::size_t c = 0; c < s.feat_dim; ++c) {
      p.amp.push_back(rng.uniform(0.5, 1.5));
      p.freq.push_back(0.5 + static_cast<double>(rng.below(3)) * 0.5);
      p.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
      p.offset.push_back(rng.uniform(-1.0, 1.0));
    }
    g.protos.push_back(std::move(p));
  }
  for (std::size_t prev = 0; prev <= n; ++prev) {
    std::vector<double> row(n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      row[k] = (prev == k + 1) ? 0.0 : rng.uniform(0.2, 1.0);
      z += row[k];
    }
    for (auto& v : row) v /= z;
    g.transition.push_back(std::move(row));
  }
  return g;
}

inline int draw_token(const std::vector<double>& row, Rng& rng) {
  double u = rng.uniform(), acc = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k) {
    acc += row[k];
    if (u < acc) return static_cast<int>(k) + 1;
  }
  for (std::size_t k = row.size(); k-- > 0;)
    if (row[k] > 0.0) return static_cast<int>(k) + 1;
  return 1;
}

inline std::uint64_t utterance_seed(std::uint64_t seed, Split split, std::size_t index) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + (static_cast<std::uint64_t>(split) + 1) * 0xbf58476d1ce4e5b9ULL +
                    static_cast<std::uint64_t>(index) * 0x94d049bb133111ebULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr int kMaxLengthRetries = 64;

inline Utterance make_utterance(const DomainSpec& s, const Grammar& g, Split split, std::size_t index) {
  Rng rng(utterance_seed(s.seed, split, index));
  const double mu = std::log(s.mean_frames) - 0.5 * s.length_dispersion * s.length_dispersion;
  std::size_t frames = 0;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxLengthRetries) {
      throw InfeasibleAlignment("generate: no feasible length for domain " + s.name + " after " +
                                std::to_string(kMaxLengthRetries) + " draws");
    }
    frames = static_cast<std::size_t>(
        std::llround(std::exp(mu + s.length_dispersion * rng.normal())));
    if (frames >= min_frames_for(s.min_tokens)) break;
  }
  const std::size_t max_fit = frames / 4 - 1;
  const std::size_t n = s.min_tokens + rng.below(std::min(s.max_tokens, max_fit) - s.min_tokens + 1);

  Utterance u;
  u.id = s.name + "-" + split_name(split) + "-" + std::to_string(index);
  u.domain = s.name;
  u.split = split;
  u.frames = frames;
  u.feat_dim = s.feat_dim;
  int prev = 0;
  for (std::size_t i = 0; i < n; ++i) {
    prev = draw_token(g.transition[static_cast<std::size_t>(prev)], rng);
    u.tokens.push_back(prev);
  }

  // Segment weights: silences 0.5, tokens 1, each scaled by 1 + jitter*U(-1,1).
  auto jitter = [&](double base) { return base * (1.0 + s.duration_jitter * rng.uniform(-1.0, 1.0)); };
  std::vector<double> w{jitter(0.5)};
  for (std::size_t i = 0; i < n; ++i) w.push_back(jitter(1.0));
  w.push_back(jitter(0.5));
  double wz = 0.0;
  for (double v : w) wz += v;
  std::vector<std::size_t> bounds{0};
  double acc = 0.0;
  for (double v : w) {
    acc += v;
    bounds.push_back(static_cast<std::size_t>(std::llround(acc / wz * static_cast<double>(frames))));
  }
  bounds.back() = frames;

  const std::size_t F = s.feat_dim;
  u.features.assign(frames * F, 0.0);
  for (std::size_t seg = 1; seg + 1 < w.size(); ++seg) {
    const auto& p = g.protos[static_cast<std::size_t>(u.tokens[seg - 1]) - 1];
    const std::size_t b = bounds[seg], e = std::max(bounds[seg + 1], b + 1);
    for (std::size_t t = b; t < e && t < frames; ++t) {
      const double pos = (static_cast<double>(t - b) + 0.5) / static_cast<double>(e - b);
      const double uu = std::pow(pos, s.tempo);
      for (std::size_t c = 0; c < F; ++c) {
        u.features[t * F + c] =
            p.offset[c] + p.amp[c] * std::sin(std::numbers::pi * p.freq[c] * uu + p.phase[c]);
      }
    }
  }
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < F; ++c) {
      const double shift =
          s.channel_shift +
          s.channel_tilt * (F > 1 ? static_cast<double>(c) / static_cast<double>(F - 1) - 0.5 : 0.0);
      double& v = u.features[t * F + c];
      v = s.channel_scale * v + shift;
      if (s.noise > 0.0) v += s.noise * rng.normal();
    }
  }
  return u;
}

}  // namespace detail

inline Corpus generate(const DomainSpec& spec, const SplitCounts& counts) {
  spec.validate();
  counts.validate();
  const auto g = detail::make_grammar(spec);
  Corpus c{spec, counts, {}};
  const std::size_t held = counts.heldout_count();
  for (std::size_t i = 0; i < counts.train - held; ++i)
    c.utterances.push_back(detail::make_utterance(spec, g, Split::Train, i));
  for (std::size_t i = 0; i < held; ++i)
    c.utterances.push_back(detail::make_utterance(spec, g, Split::Heldout, i));
  for (std::size_t i = 0; i < counts.dev; ++i)
    c.utterances.push_back(detail::make_utterance(spec, g, Split::Dev, i));
  for (std::size_t i = 0; i < counts.test; ++i)
    c.utterances.push_back(detail::make_utterance(spec, g, Split::Test, i));
  return c;
}

struct MedianSplit {
  std::vector<std::size_t> shorter, longer;  // indices into the input
  std::size_t median_frames = 0;
};

// Lower median m of the durations; shorter holds every item with
// duration <= m, so ties go to shorter.
inline MedianSplit median_split(const std::vector<std::size_t>& durations) {
  if (durations.empty()) throw InvalidArgument("median_split: empty test split");
  auto sorted = durations;
  std::sort(sorted.begin(), sorted.end());
  MedianSplit m;
  m.median_frames = sorted[(sorted.size() - 1) / 2];
  for (std::size_t i = 0; i < durations.size(); ++i)
    (durations[i] <= m.median_frames ? m.shorter : m.longer).push_back(i);
  return m;
}

inline MedianSplit median_split(const std::vector<const Utterance*>& utts) {
  std::vector<std::size_t> d;
  for (const auto* u : utts) d.push_back(u->frames);
  return median_split(d);
}

// On-disk layout of a corpus directory:
//   corpus.json     {"format_version":1,"spec":DomainSpec,"counts":SplitCounts}
//   manifest.tsv    header line "id\tdomain\tsplit\tframes\ttokens", then one
//                   line per utterance; tokens are space-separated ids
//   feats/<id>.f64  8-byte magic "HPADFEAT", u64 frames, u64 feat_dim
//                   (little-endian), then frames*feat_dim IEEE-754 binary64
//                   values, little-endian, row-major
namespace corpus_io {

inline constexpr int kFormatVersion = 1;
inline constexpr char kFeatMagic[8] = {'H', 'P', 'A', 'D', 'F', 'E', 'A', 'T'};

namespace fs = std::filesystem;

using namespace binary_io;

inline void write_features(const fs::path& p, const Utterance& u) {
  std::ofstream o(p, std::ios::binary);
  if (!o) throw InvalidArgument("cannot write " + p.string());
  o.write(kFeatMagic, 8);
  write_u64(o, u.frames);
  write_u64(o, u.feat_dim);
  for (double v : u.features) write_f64(o, v);
  if (!o) throw InvalidArgument("write failed for " + p.string());
}

inline void read_features(const fs::path& p, Utterance& u) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointNotFound(p.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kFeatMagic, 8) != 0)
    throw IncompatibleCheckpoint(p.string() + ": bad feature magic");
  const auto frames = read_u64(in), dim = read_u64(in);
  if (frames != u.frames || dim != u.feat_dim)
    throw IncompatibleCheckpoint(p.string() + ": shape disagrees with manifest");
  u.features.resize(frames * dim);
  for (auto& v : u.features) v = read_f64(in);
}

}  // namespace corpus_io

inline void save_corpus(const Corpus& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "feats");
  {
    std::ofstream o(dir / "corpus.json");
    o << nlohmann::json{{"format_version", corpus_io::kFormatVersion},
                        {"spec", c.spec},
                        {"counts", c.counts}}
             .dump(2)
      << "\n";
  }
  std::ofstream m(dir / "manifest.tsv");
  m << "id\tdomain\tsplit\tframes\ttokens\n";
  for (const auto& u : c.utterances) {
    m << u.id << '\t' << u.domain << '\t' << split_name(u.split) << '\t' << u.frames << '\t';
    for (std::size_t i = 0; i < u.tokens.size(); ++i) m << (i ? " " : "") << u.tokens[i];
    m << '\n';
    corpus_io::write_features(dir / "feats" / (u.id + ".f64"), u);
  }
  if (!m) throw InvalidArgument("cannot write manifest in " + dir.string());
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "corpus.json")) throw CheckpointNotFound((dir / "corpus.json").string());
  Corpus c;
  {
    std::ifstream in(dir / "corpus.json");
    const auto j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != corpus_io::kFormatVersion)
      throw IncompatibleCheckpoint(dir.string() + ": unsupported corpus format version");
    c.spec = j.at("spec").get<DomainSpec>();
    c.counts = j.at("counts").get<SplitCounts>();
  }
  std::ifstream m(dir / "manifest.tsv");
  if (!m) throw CheckpointNotFound((dir / "manifest.tsv").string());
  std::string line;
  std::getline(m, line);
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Utterance u;
    std::string split, toks;
    std::getline(ls, u.id, '\t');
    std::getline(ls, u.domain, '\t');
    std::getline(ls, split, '\t');
    ls >> u.frames;
    ls.ignore(1);
    std::getline(ls, toks);
    u.split = parse_split(split);
    u.feat_dim = c.spec.feat_dim;
    std::istringstream ts(toks);
    for (int t; ts >> t;) u.tokens.push_back(t);
    corpus_io::read_features(dir / "feats" / (u.id + ".f64"), u);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

}  // namespace hpadapt
