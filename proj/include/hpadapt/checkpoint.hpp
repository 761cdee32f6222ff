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

// Versioned binary checkpoints.
//
// Layout (all integers little-endian):
//   8 bytes   magic "HPADCKPT"
//   u32       format version (kCheckpointVersion)
//   u32       kind: 1 supernet, 2 materialized model
//   u32       section count n
//   n x       { 8-byte tag, NUL padded; u64 offset from file start; u64 length }
//   payloads
//
// Sections:
//   SPACE    ModelConfig as JSON text
//   ARCH     DerivedArch as JSON text (model checkpoints only)
//   WEIGHTS  u64 count, then per tensor: string name, u32 rank, u64 dims,
//            f64 values
//   LOGITS   u64 groups, then per group: u64 n, f64 values (supernet only)
//   OPTIM    u64 count, then per optimizer: string name, u64 step, u64
//            slots, per slot: u64 n, n f64 first moments, n f64 second moments
//   RNG      string (engine state text)
//   LINEAGE  JSON text: array of stage records, oldest first
//
// Strings are u64 length + bytes. Unknown section tags are skipped.

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hpadapt/binary_io.hpp"
#include "hpadapt/nn.hpp"
#include "hpadapt/optim.hpp"
#include "hpadapt/space.hpp"

namespace hpadapt {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'H', 'P', 'A', 'D', 'C', 'K', 'P', 'T'};

enum class CheckpointKind : std::uint32_t { Supernet = 1, Model = 2 };

inline const char* checkpoint_kind_name(CheckpointKind k) {
  return k == CheckpointKind::Supernet ? "supernet" : "model";
}

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::Supernet;
  ModelConfig config;
  DerivedArch arch;                          // model only
  ParamSet weights;                          // shared or materialized
  std::vector<std::vector<double>> logits;   // supernet only
  std::vector<std::pair<std::string, AdamState>> optimizers;
  std::string rng_state;
  json lineage = json::array();
};

namespace checkpoint_io {

using namespace binary_io;

inline std::string tag_of(const char* t) {
  std::string s(t);
  s.resize(8, '\0');
  return s;
}

inline std::string json_text(const json& j) { return j.dump(); }

inline std::string encode_weights(const ParamSet& p) {
  std::ostringstream o;
  write_u64(o, p.size());
  for (const auto& [name, t] : p.items()) {
    write_string(o, name);
    write_u32(o, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_u64(o, d);
    for (double v : t.data()) write_f64(o, v);
  }
  return o.str();
}

inline ParamSet decode_weights(std::istream& in) {
  ParamSet p;
  const auto n = read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(in, 4096);
    const auto rank = read_u32(in);
    if (rank > 8) throw IncompatibleCheckpoint("tensor " + name + ": rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = read_u64(in);
      numel *= d;
    }
    if (numel > (std::uint64_t{1} << 32)) throw IncompatibleCheckpoint("tensor " + name + " too large");
    std::vector<double> v(numel);
    for (auto& x : v) x = read_f64(in);
    p.add(name, Tensor(shape, std::move(v), true));
  }
  return p;
}

inline std::string encode_logits(const std::vector<std::vector<double>>& l) {
  std::ostringstream o;
  write_u64(o, l.size());
  for (const auto& g : l) {
    write_u64(o, g.size());
    for (double v : g) write_f64(o, v);
  }
  return o.str();
}

inline std::vector<std::vector<double>> decode_logits(std::istream& in) {
  std::vector<std::vector<double>> l(read_u64(in));
  for (auto& g : l) {
    const auto n = read_u64(in);
    if (n > 4096) throw IncompatibleCheckpoint("logit group of size " + std::to_string(n));
    g.resize(n);
    for (auto& v : g) v = read_f64(in);
  }
  return l;
}

inline std::string encode_optim(const std::vector<std::pair<std::string, AdamState>>& opts) {
  std::ostringstream o;
  write_u64(o, opts.size());
  for (const auto& [name, st] : opts) {
    write_string(o, name);
    write_u64(o, static_cast<std::uint64_t>(st.step));
    write_u64(o, st.m.size());
    for (std::size_t i = 0; i < st.m.size(); ++i) {
      write_u64(o, st.m[i].size());
      for (double v : st.m[i]) write_f64(o, v);
      for (double v : st.v[i]) write_f64(o, v);
    }
  }
  return o.str();
}

inline std::vector<std::pair<std::string, AdamState>> decode_optim(std::istream& in) {
  std::vector<std::pair<std::string, AdamState>> opts(read_u64(in));
  for (auto& [name, st] : opts) {
    name = read_string(in, 4096);
    st.step = static_cast<long>(read_u64(in));
    const auto slots = read_u64(in);
    st.m.resize(slots);
    st.v.resize(slots);
    for (std::size_t i = 0; i < slots; ++i) {
      const auto n = read_u64(in);
      if (n > (std::uint64_t{1} << 32)) throw IncompatibleCheckpoint("optimizer slot too large");
      st.m[i].resize(n);
      st.v[i].resize(n);
      for (auto& v : st.m[i]) v = read_f64(in);
      for (auto& v : st.v[i]) v = read_f64(in);
    }
  }
  return opts;
}

}  // namespace checkpoint_io

inline std::string serialize(const Checkpoint& c) {
  using namespace checkpoint_io;
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back(tag_of("SPACE"), json_text(json(c.config)));
  if (c.kind == CheckpointKind::Model) {
    sections.emplace_back(tag_of("ARCH"), json_text(c.arch.to_json(c.config.space)));
  }
  sections.emplace_back(tag_of("WEIGHTS"), encode_weights(c.weights));
  if (c.kind == CheckpointKind::Supernet) sections.emplace_back(tag_of("LOGITS"), encode_logits(c.logits));
  sections.emplace_back(tag_of("OPTIM"), encode_optim(c.optimizers));
  {
    std::ostringstream o;
    write_string(o, c.rng_state);
    sections.emplace_back(tag_of("RNG"), o.str());
  }
  sections.emplace_back(tag_of("LINEAGE"), json_text(c.lineage));

  std::ostringstream o;
  o.write(kCheckpointMagic, 8);
  write_u32(o, kCheckpointVersion);
  write_u32(o, static_cast<std::uint32_t>(c.kind));
  write_u32(o, static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = 8 + 4 * 3 + sections.size() * (8 + 8 + 8);
  for (const auto& [tag, body] : sections) {
    o.write(tag.data(), 8);
    write_u64(o, offset);
    write_u64(o, body.size());
    offset += body.size();
  }
  for (const auto& [tag, body] : sections) o.write(body.data(), static_cast<std::streamsize>(body.size()));
  return o.str();
}

// `origin` names the source in diagnostics.
inline Checkpoint deserialize(const std::string& bytes, const std::string& origin = "checkpoint") {
  using namespace checkpoint_io;
  auto fail = [&](const std::string& why) -> IncompatibleCheckpoint {
    return IncompatibleCheckpoint(origin + ": " + why);
  };
  if (bytes.size() < 20 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0) throw fail("bad magic");
  std::istringstream head(bytes.substr(8, 12));
  const auto version = read_u32(head);
  if (version != kCheckpointVersion) {
    throw fail("unsupported format version " + std::to_string(version) + " (expected " +
               std::to_string(kCheckpointVersion) + ")");
  }
  const auto kind = read_u32(head);
  if (kind != 1 && kind != 2) throw fail("unknown kind " + std::to_string(kind));
  const auto count = read_u32(head);
  if (bytes.size() < 20 + std::uint64_t{count} * 24) throw fail("truncated section table");

  std::vector<std::pair<std::string, std::string>> sections;
  std::istringstream table(bytes.substr(20, std::size_t{count} * 24));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string tag(8, '\0');
    table.read(tag.data(), 8);
    const auto off = read_u64(table), len = read_u64(table);
    if (off > bytes.size() || len > bytes.size() - off) throw fail("section out of bounds");
    sections.emplace_back(tag, bytes.substr(off, len));
  }
  auto section = [&](const char* name) -> std::istringstream {
    for (const auto& [tag, body] : sections)
      if (tag == tag_of(name)) return std::istringstream(body);
    throw fail(std::string("missing section ") + name);
  };
  auto parse_json = [&](const char* name) {
    try {
      return json::parse(section(name).str());
    } catch (const json::exception& e) {
      throw fail(std::string("section ") + name + ": " + e.what());
    }
  };

  Checkpoint c;
  c.kind = static_cast<CheckpointKind>(kind);
  try {
    c.config = parse_json("SPACE").get<ModelConfig>();
    c.config.validate();
    if (c.kind == CheckpointKind::Model) c.arch = DerivedArch::from_json(c.config.space, parse_json("ARCH"));
  } catch (const json::exception& e) {
    throw fail(e.what());
  } catch (const ConfigError& e) {
    throw fail(e.what());
  } catch (const InvalidArgument& e) {
    throw fail(e.what());
  }
  {
    auto in = section("WEIGHTS");
    c.weights = decode_weights(in);
  }
  if (c.kind == CheckpointKind::Supernet) {
    auto in = section("LOGITS");
    c.logits = decode_logits(in);
  }
  {
    auto in = section("OPTIM");
    c.optimizers = decode_optim(in);
  }
  {
    auto in = section("RNG");
    c.rng_state = read_string(in);
  }
  c.lineage = parse_json("LINEAGE");
  if (!c.lineage.is_array()) throw fail("lineage is not an array");
  return c;
}

// Equality of every serialized bit, including RNG, optimizer and lineage.
inline bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  return serialize(a) == serialize(b);
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  binary_io::atomic_write(path, serialize(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in || !std::filesystem::is_regular_file(path)) throw CheckpointNotFound(path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str(), path.string());
}

}  // namespace hpadapt
