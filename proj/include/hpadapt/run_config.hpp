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

// Declarative run configuration (one JSON file, schema_version 1).
//
//   {
//     "schema_version": 1,
//     "command": "run",                       optional; must match the subcommand
//                                             (gen-data and evaluate also accept
//                                             run and sweep files)
//     "output_dir": "runs/two_arm",
//     "corpora": {"source": "data/source", "target": "data/target"},
//     "model": {...},                         ModelConfig
//     "stages": [{...}, ...],                 StageConfig list
//     "eval_corpus": "target",
//     "seeds": [1, 2, 3],
//     "sweep": {"etas": [0, 0.003, 0.03]},    sweep only
//     "domains": {"source": {...}, ...}       gen-data only
//   }
//
// Relative paths resolve against the directory holding the config file.
// Unknown keys anywhere are errors naming the dotted path.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hpadapt/config_reader.hpp"
#include "hpadapt/report.hpp"

namespace hpadapt {

inline constexpr int kRunConfigSchema = 1;

struct DomainConfig {
  DomainSpec spec;
  SplitCounts counts;
};

struct RunConfig {
  int schema_version = kRunConfigSchema;
  std::string command;
  std::filesystem::path output_dir;
  std::map<std::string, std::filesystem::path> corpora;
  Recipe recipe;
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> sweep_etas;
  std::map<std::string, DomainConfig> domains;
};

inline ArchSpace parse_arch_space(ConfigReader r) {
  ArchSpace s;
  s.fd = r.get("fd", s.fd);
  s.ah = r.get("ah", s.ah);
  s.adim = r.get("adim", s.adim);
  s.ck = r.get("ck", s.ck);
  s.d_model = r.get("d_model", s.d_model);
  s.encoder_blocks = r.get("encoder_blocks", s.encoder_blocks);
  s.decoder_blocks = r.get("decoder_blocks", s.decoder_blocks);
  s.split_decoder_attention = r.get("split_decoder_attention", s.split_decoder_attention);
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.field(e.field()), e.message());
  }
  return s;
}

inline ModelConfig parse_model_config(ConfigReader r) {
  ModelConfig c;
  if (r.has("space")) c.space = parse_arch_space(r.child("space"));
  c.feat_dim = r.get("feat_dim", c.feat_dim);
  c.vocab = r.get("vocab", c.vocab);
  c.ctc_weight = r.get("ctc_weight", c.ctc_weight);
  c.label_smoothing = r.get("label_smoothing", c.label_smoothing);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.field(e.field()), e.message());
  }
  return c;
}

inline DomainConfig parse_domain_config(ConfigReader r, const std::string& name) {
  DomainConfig d;
  auto& s = d.spec;
  s.name = name;
  s.mean_frames = r.get("mean_frames", s.mean_frames);
  s.length_dispersion = r.get("length_dispersion", s.length_dispersion);
  s.min_tokens = r.get("min_tokens", s.min_tokens);
  s.max_tokens = r.get("max_tokens", s.max_tokens);
  s.duration_jitter = r.get("duration_jitter", s.duration_jitter);
  s.tempo = r.get("tempo", s.tempo);
  s.channel_shift = r.get("channel_shift", s.channel_shift);
  s.channel_tilt = r.get("channel_tilt", s.channel_tilt);
  s.channel_scale = r.get("channel_scale", s.channel_scale);
  s.noise = r.get("noise", s.noise);
  s.feat_dim = r.get("feat_dim", s.feat_dim);
  s.vocab = r.get("vocab", s.vocab);
  s.prototype_seed = r.get("prototype_seed", s.prototype_seed);
  s.seed = r.get("seed", s.seed);
  if (r.has("counts")) {
    auto c = r.child("counts");
    d.counts.train = c.get("train", d.counts.train);
    d.counts.dev = c.get("dev", d.counts.dev);
    d.counts.test = c.get("test", d.counts.test);
    d.counts.heldout_fraction = c.get("heldout_fraction", d.counts.heldout_fraction);
    c.finish();
    try {
      d.counts.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(c.field(e.field()), e.message());
    }
  }
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.field(e.field()), e.message());
  }
  return d;
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> v{"gen-data", "run", "evaluate", "dump-arch", "sweep"};
  return v;
}

// Every section present is validated; `command` decides which are required,
// so one file can drive gen-data, run, sweep and evaluate.
inline RunConfig parse_run_config(const json& j, const std::string& command,
                                  const std::filesystem::path& base_dir = {}) {
  ConfigReader r(j, "");
  RunConfig c;
  c.schema_version = r.require<int>("schema_version");
  if (c.schema_version != kRunConfigSchema) {
    throw ConfigError("schema_version", "unsupported schema version " + std::to_string(c.schema_version) +
                                            " (expected " + std::to_string(kRunConfigSchema) + ")");
  }
  c.command = r.get<std::string>("command", command);
  // evaluate re-scores run and sweep outputs; gen-data prepares their corpora.
  const bool training_file = c.command == "run" || c.command == "sweep";
  const bool compatible = (command == "evaluate" && training_file) ||
                          (command == "gen-data" && (training_file || c.command == "evaluate"));
  if (c.command != command && !compatible) {
    throw ConfigError("command", "config is for '" + c.command + "' but the subcommand is '" + command + "'");
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  c.output_dir = resolve(r.require<std::string>("output_dir"));
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must be nonempty");
  const bool training = command == "run" || command == "sweep" || command == "evaluate";

  if (r.has("domains") || command == "gen-data") {
    auto d = r.child("domains");
    const json& raw = j.at("domains");
    if (raw.empty()) throw ConfigError("domains", "must name at least one domain");
    for (auto it = raw.begin(); it != raw.end(); ++it) {
      c.domains.emplace(it.key(), parse_domain_config(d.child(it.key()), it.key()));
    }
    d.finish();
  }
  if (r.has("corpora") || training) {
    auto cr = r.child("corpora");
    const json& raw = j.at("corpora");
    for (auto it = raw.begin(); it != raw.end(); ++it) {
      c.corpora.emplace(it.key(), resolve(cr.require<std::string>(it.key())));
    }
    cr.finish();
  }
  if (r.has("model") || training) c.recipe.model = parse_model_config(r.child("model"));
  if (r.has("stages") || training) {
    const json& stages = r.raw("stages");
    if (!stages.is_array() || stages.empty()) throw ConfigError("stages", "expected a nonempty array");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      c.recipe.stages.push_back(parse_stage_config(stages[i], "stages[" + std::to_string(i) + "]"));
    }
  }
  c.recipe.eval_corpus = r.get<std::string>("eval_corpus", c.recipe.eval_corpus);
  c.seeds = r.get("seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("seeds", "must be nonempty");
  if (r.has("sweep") || command == "sweep") {
    auto s = r.child("sweep");
    c.sweep_etas = s.require<std::vector<double>>("etas");
    if (c.sweep_etas.empty()) throw ConfigError("sweep.etas", "must be nonempty");
    for (std::size_t i = 0; i < c.sweep_etas.size(); ++i) {
      if (!(c.sweep_etas[i] >= 0.0) || !std::isfinite(c.sweep_etas[i]))
        throw ConfigError("sweep.etas[" + std::to_string(i) + "]", "must be finite and nonnegative");
    }
    s.finish();
  }
  r.finish();

  if (!c.recipe.stages.empty()) {
    if (!c.corpora.count(c.recipe.eval_corpus)) {
      throw ConfigError("eval_corpus", "no corpus named '" + c.recipe.eval_corpus + "'");
    }
    for (std::size_t i = 0; i < c.recipe.stages.size(); ++i) {
      const auto& s = c.recipe.stages[i];
      if (s.uses_corpus() && !c.corpora.count(s.corpus)) {
        throw ConfigError("stages[" + std::to_string(i) + "].corpus", "no corpus named '" + s.corpus + "'");
      }
    }
    c.recipe.resolve();
    c.recipe.validate();
  }
  if (c.command == "sweep" && c.sweep_etas.empty()) throw ConfigError("sweep", "required field is missing");
  if (c.command == "sweep" && eta_dependent_stages(c.recipe).empty()) {
    throw ConfigError("stages", "sweep needs an adapt stage to apply eta to");
  }
  return c;
}

// Where gen-data writes a domain: its corpora entry, else <output_dir>/<name>.
inline std::filesystem::path domain_path(const RunConfig& c, const std::string& name) {
  auto it = c.corpora.find(name);
  return it != c.corpora.end() ? it->second : c.output_dir / name;
}

// Splits "a.b[2].c" into keys and indices.
inline std::vector<std::variant<std::string, std::size_t>> parse_field_path(const std::string& path) {
  std::vector<std::variant<std::string, std::size_t>> out;
  std::string cur;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const char ch = path[i];
    if (ch == '.') {
      if (cur.empty()) throw ConfigError(path, "malformed field path");
      out.emplace_back(cur);
      cur.clear();
    } else if (ch == '[') {
      if (!cur.empty()) out.emplace_back(cur);
      cur.clear();
      const auto close = path.find(']', i);
      if (close == std::string::npos) throw ConfigError(path, "malformed field path");
      const std::string idx = path.substr(i + 1, close - i - 1);
      if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError(path, "malformed index");
      out.emplace_back(static_cast<std::size_t>(std::stoul(idx)));
      i = close;
      if (i + 1 < path.size() && path[i + 1] == '.') ++i;
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.emplace_back(cur);
  if (out.empty()) throw ConfigError(path, "empty field path");
  return out;
}

// Applies "path=value" overrides. Values parse as JSON when they can and
// as strings otherwise. Only scalar fields may be overridden; the parent
// object must already exist.
inline void apply_overrides(json& j, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(s, "override must look like path=value");
    const std::string path = s.substr(0, eq), text = s.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    if (!value.is_primitive()) throw ConfigError(path, "only scalar fields can be overridden");
    const auto parts = parse_field_path(path);
    json* node = &j;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (const auto* key = std::get_if<std::string>(&parts[i])) {
        if (!node->is_object() || !node->contains(*key)) throw ConfigError(path, "no such field");
        node = &(*node)[*key];
      } else {
        const auto idx = std::get<std::size_t>(parts[i]);
        if (!node->is_array() || idx >= node->size()) throw ConfigError(path, "index out of range");
        node = &(*node)[idx];
      }
    }
    if (const auto* key = std::get_if<std::string>(&parts.back())) {
      if (!node->is_object()) throw ConfigError(path, "parent is not an object");
      if (node->contains(*key) && !(*node)[*key].is_primitive())
        throw ConfigError(path, "only scalar fields can be overridden");
      (*node)[*key] = value;
    } else {
      const auto idx = std::get<std::size_t>(parts.back());
      if (!node->is_array() || idx >= node->size()) throw ConfigError(path, "index out of range");
      if (!(*node)[idx].is_primitive()) throw ConfigError(path, "only scalar fields can be overridden");
      (*node)[idx] = value;
    }
  }
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw CheckpointNotFound(p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", p.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& p, const std::string& command,
                                 const std::vector<std::string>& sets = {}) {
  json j = read_json_file(p);
  apply_overrides(j, sets);
  return parse_run_config(j, command, p.parent_path());
}

}  // namespace hpadapt
