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

// Evaluation reports: length-stratified TER per system, eta sweeps with a
// shared pre-training stage, and layer-indexed architecture tables.
//
// Reports are functions of checkpoints and the evaluation corpus only.
// Wall-clock goes to a separate timing record so report.json is
// byte-identical across reruns and regenerations.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hpadapt/pipeline.hpp"

namespace hpadapt {

struct TerCell {
  double ter = 0.0;
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;
  std::size_t utterances = 0;

  static TerCell of(const ErrorCounts& e) { return {e.rate(), e.edits, e.ref_tokens, e.utterances}; }
};

inline json to_json(const TerCell& c) {
  return json{{"ter", c.ter}, {"edits", c.edits}, {"ref_tokens", c.ref_tokens}, {"utterances", c.utterances}};
}

struct StratifiedTer {
  TerCell overall, shorter, longer;
  std::size_t median_frames = 0;  // shorter holds durations <= this
};

inline json to_json(const StratifiedTer& s) {
  return json{{"overall", to_json(s.overall)},
              {"shorter", to_json(s.shorter)},
              {"longer", to_json(s.longer)},
              {"median_frames", s.median_frames}};
}

// TER of `recognize` over `utts` and over their two duration halves.
template <class Recognize>
StratifiedTer stratified_score(const std::vector<const Utterance*>& utts, Recognize&& recognize) {
  const MedianSplit ms = median_split(utts);
  ErrorCounts all, sh, lo;
  auto run = [&](const std::vector<std::size_t>& idx, ErrorCounts& half) {
    for (auto i : idx) {
      const std::vector<int> hyp = recognize(*utts[i]);
      half.add(hyp, utts[i]->tokens);
      all.add(hyp, utts[i]->tokens);
    }
  };
  run(ms.shorter, sh);
  run(ms.longer, lo);
  return {TerCell::of(all), TerCell::of(sh), TerCell::of(lo), ms.median_frames};
}

inline StratifiedTer stratified_eval(const ConformerModel& m, const Corpus& c, Split split = Split::Test) {
  const auto utts = c.split(split);
  if (utts.empty()) {
    throw InvalidArgument(std::string("stratified_eval: ") + split_name(split) + " split is empty");
  }
  return stratified_score(utts, [&](const Utterance& u) { return m.recognize(u.feature_tensor()).tokens; });
}

// Penalty of the last adapt stage in a lineage (0 when there is none).
inline Penalty lineage_penalty(const json& lineage) {
  Penalty p;
  for (const auto& r : lineage) {
    if (r.value("kind", "") == "adapt") {
      p.eta = r["config"].value("eta", 0.0);
      p.eta_scale = r["config"].value("eta_scale", 1.0);
    }
  }
  return p;
}

struct SystemReport {
  std::string system;
  std::uint64_t seed = 0;
  Penalty penalty;
  StratifiedTer ter;
  std::size_t param_count = 0;
  json arch;
  std::string checkpoint;  // relative to the report directory; empty in memory
};

inline json to_json(const SystemReport& s) {
  return json{{"system", s.system},
              {"seed", s.seed},
              {"eta", s.penalty.eta},
              {"eta_scale", s.penalty.eta_scale},
              {"ter", to_json(s.ter)},
              {"param_count", s.param_count},
              {"arch", s.arch},
              {"checkpoint", s.checkpoint}};
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Checkpoints of one recipe run, keyed by stage name.
using StageCheckpoints = std::map<std::string, Checkpoint>;

struct Report {
  std::string eval_corpus;  // fingerprint
  std::vector<SystemReport> systems;
  json stages = json::object();  // seed -> stage -> metrics

  std::vector<const SystemReport*> rows(const std::string& system) const {
    std::vector<const SystemReport*> out;
    for (const auto& s : systems)
      if (s.system == system) out.push_back(&s);
    return out;
  }

  std::vector<std::string> system_names() const {
    std::vector<std::string> out;
    for (const auto& s : systems)
      if (std::find(out.begin(), out.end(), s.system) == out.end()) out.push_back(s.system);
    return out;
  }

  // Medians over seeds per system.
  json summary() const {
    json out = json::array();
    for (const auto& name : system_names()) {
      std::vector<double> all, sh, lo, pc;
      for (const auto* r : rows(name)) {
        all.push_back(r->ter.overall.ter);
        sh.push_back(r->ter.shorter.ter);
        lo.push_back(r->ter.longer.ter);
        pc.push_back(static_cast<double>(r->param_count));
      }
      out.push_back(json{{"system", name},
                         {"seeds", all.size()},
                         {"median_ter", median(all)},
                         {"median_ter_shorter", median(sh)},
                         {"median_ter_longer", median(lo)},
                         {"median_param_count", median(pc)}});
    }
    return out;
  }

  json to_json() const {
    json sys = json::array();
    for (const auto& s : systems) sys.push_back(hpadapt::to_json(s));
    return json{{"format_version", 1},
                {"eval_corpus", eval_corpus},
                {"systems", sys},
                {"summary", summary()},
                {"stages", stages}};
  }

  std::string table() const {
    std::ostringstream o;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %6s %8s %9s %8s %8s %8s %11s\n", "system", "seed", "eta", "params",
                  "TER", "shorter", "longer", "n(sh/lo)");
    o << line;
    for (const auto& s : systems) {
      std::snprintf(line, sizeof line, "%-16s %6llu %8.4g %9zu %8.4f %8.4f %8.4f %5zu/%-5zu\n", s.system.c_str(),
                    static_cast<unsigned long long>(s.seed), s.penalty.eta, s.param_count, s.ter.overall.ter,
                    s.ter.shorter.ter, s.ter.longer.ter, s.ter.shorter.utterances, s.ter.longer.utterances);
      o << line;
    }
    o << "\nmedian over seeds\n";
    for (const auto& r : summary()) {
      std::snprintf(line, sizeof line, "%-16s %6zu %8s %9.0f %8.4f %8.4f %8.4f\n",
                    r["system"].get<std::string>().c_str(), r["seeds"].get<std::size_t>(), "",
                    r["median_param_count"].get<double>(), r["median_ter"].get<double>(),
                    r["median_ter_shorter"].get<double>(), r["median_ter_longer"].get<double>());
      o << line;
    }
    return o.str();
  }
};

inline std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// Every stage of a recipe takes the run seed.
inline Recipe with_seed(Recipe r, std::uint64_t seed) {
  for (auto& s : r.stages) s.seed = seed;
  return r;
}

// Evaluates the recipe's systems for each seeded run. `ckpt_dirs`, when
// given, holds the directory of each run relative to the report directory.
inline Report build_report(const Recipe& recipe, const std::vector<std::pair<std::uint64_t, StageCheckpoints>>& runs,
                           const Corpus& eval, const std::vector<std::string>& ckpt_dirs = {}) {
  Report rep;
  rep.eval_corpus = corpus_fingerprint(eval);
  auto r = recipe;
  r.resolve();
  const auto systems = r.systems();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& [seed, ckpts] = runs[k];
    json stage_metrics = json::object();
    for (const auto& s : r.stages) {
      auto it = ckpts.find(s.name);
      if (it == ckpts.end()) throw InvalidArgument("report: no checkpoint for stage '" + s.name + "'");
      stage_metrics[s.name] = it->second.lineage.back()["metrics"];
    }
    rep.stages[std::to_string(seed)] = stage_metrics;
    for (const auto& name : systems) {
      const Checkpoint& c = ckpts.at(name);
      const ConformerModel m = model_from(c);
      SystemReport sr;
      sr.system = name;
      sr.seed = seed;
      sr.penalty = lineage_penalty(c.lineage);
      sr.ter = stratified_eval(m, eval);
      sr.param_count = m.param_count();
      sr.arch = m.arch().to_json(c.config.space);
      if (k < ckpt_dirs.size()) sr.checkpoint = ckpt_dirs[k] + "/" + name + ".ckpt";
      rep.systems.push_back(std::move(sr));
    }
  }
  return rep;
}

inline StageCheckpoints load_stage_checkpoints(const Recipe& recipe, const std::filesystem::path& dir) {
  StageCheckpoints out;
  for (const auto& s : recipe.stages) out.emplace(s.name, load_checkpoint(stage_checkpoint_path(dir, s.name)));
  return out;
}

// Wall-clock per seed and stage; kept apart from the deterministic report.
inline json timing_record(const std::vector<std::pair<std::uint64_t, RecipeResult>>& runs) {
  json t = json::object();
  for (const auto& [seed, res] : runs) {
    json s = json::object();
    for (const auto& st : res.stages) s[st.name] = json{{"seconds", st.seconds}, {"reused", st.reused}};
    t[std::to_string(seed)] = s;
  }
  return t;
}

// A stage depends on eta when it is an adapt stage or consumes one.
inline std::set<std::string> eta_dependent_stages(Recipe r) {
  r.resolve();
  std::set<std::string> dep;
  for (const auto& s : r.stages)
    if (s.kind == StageKind::Adapt || dep.count(s.from)) dep.insert(s.name);
  return dep;
}

inline Recipe with_eta(Recipe r, double eta) {
  for (auto& s : r.stages)
    if (s.kind == StageKind::Adapt) s.eta = eta;
  return r;
}

inline std::string eta_dir_name(double eta) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "eta_%g", eta);
  return buf;
}

struct SweepArm {
  double eta = 0.0;
  std::optional<Report> report;
  std::vector<std::pair<std::uint64_t, RecipeResult>> runs;
  std::vector<std::string> errors;  // one per failed seed
};

struct SweepResult {
  std::vector<SweepArm> arms;

  json to_json() const {
    json rows = json::array(), errors = json::array();
    for (const auto& a : arms) {
      for (const auto& e : a.errors) errors.push_back(json{{"eta", a.eta}, {"error", e}});
      if (!a.report) continue;
      for (auto r : a.report->summary()) {
        r["eta"] = a.eta;
        rows.push_back(std::move(r));
      }
    }
    json reports = json::array();
    for (const auto& a : arms)
      reports.push_back(json{{"eta", a.eta}, {"report", a.report ? a.report->to_json() : json()}});
    return json{{"format_version", 1}, {"rows", rows}, {"errors", errors}, {"arms", reports}};
  }

  std::string table() const {
    std::ostringstream o;
    char line[256];
    std::snprintf(line, sizeof line, "%8s %-16s %6s %9s %8s %8s %8s\n", "eta", "system", "seeds", "params", "TER",
                  "shorter", "longer");
    o << line;
    const json j = to_json();
    for (const auto& r : j["rows"]) {
      std::snprintf(line, sizeof line, "%8.4g %-16s %6zu %9.0f %8.4f %8.4f %8.4f\n", r["eta"].get<double>(),
                    r["system"].get<std::string>().c_str(), r["seeds"].get<std::size_t>(),
                    r["median_param_count"].get<double>(), r["median_ter"].get<double>(),
                    r["median_ter_shorter"].get<double>(), r["median_ter_longer"].get<double>());
      o << line;
    }
    for (const auto& a : arms)
      for (const auto& e : a.errors) o << "eta " << a.eta << " failed: " << e << "\n";
    return o.str();
  }
};

// One recipe run per (eta, seed). Stages that do not depend on eta run once
// per seed and are shared by every arm. A failing arm records its error and
// the remaining arms still run. With an output directory, checkpoints go to
// <out>/seed_<s>/shared and <out>/seed_<s>/eta_<v>.
inline SweepResult run_sweep(const Recipe& base, const std::vector<double>& etas,
                             const std::vector<std::uint64_t>& seeds,
                             const std::map<std::string, const Corpus*>& corpora, const Corpus& eval,
                             const std::filesystem::path& out = {}) {
  if (etas.empty()) throw ConfigError("sweep.etas", "must be nonempty");
  for (std::size_t i = 0; i < etas.size(); ++i) {
    if (!(etas[i] >= 0.0) || !std::isfinite(etas[i]))
      throw ConfigError("sweep.etas[" + std::to_string(i) + "]", "must be finite and nonnegative");
  }
  if (seeds.empty()) throw ConfigError("seeds", "must be nonempty");
  const auto dep = eta_dependent_stages(base);
  if (dep.empty()) throw ConfigError("stages", "sweep needs an adapt stage to apply eta to");

  Recipe shared_recipe = base;
  shared_recipe.resolve();
  std::erase_if(shared_recipe.stages, [&](const StageConfig& s) { return dep.count(s.name) > 0; });

  SweepResult res;
  for (double eta : etas) res.arms.push_back(SweepArm{eta, std::nullopt, {}, {}});
  std::vector<std::vector<std::pair<std::uint64_t, StageCheckpoints>>> ckpts(etas.size());
  std::vector<std::vector<std::string>> dirs(etas.size());

  for (auto seed : seeds) {
    const std::filesystem::path sdir = out.empty() ? out : out / seed_dir_name(seed);
    RecipeOptions shared_opt;
    if (!out.empty()) shared_opt.workdir = sdir / "shared";
    std::map<std::string, Checkpoint> shared;
    try {
      if (!shared_recipe.stages.empty()) shared = run_recipe(with_seed(shared_recipe, seed), corpora, shared_opt).checkpoints;
    } catch (const std::exception& e) {
      for (auto& a : res.arms) a.errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
      continue;
    }
    for (std::size_t i = 0; i < etas.size(); ++i) {
      RecipeOptions opt;
      opt.preloaded = shared;
      if (!out.empty()) opt.workdir = sdir / eta_dir_name(etas[i]);
      try {
        auto r = run_recipe(with_seed(with_eta(base, etas[i]), seed), corpora, opt);
        ckpts[i].emplace_back(seed, r.checkpoints);
        dirs[i].push_back(seed_dir_name(seed) + "/" + eta_dir_name(etas[i]));
        res.arms[i].runs.emplace_back(seed, std::move(r));
      } catch (const std::exception& e) {
        res.arms[i].errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
  }
  for (std::size_t i = 0; i < etas.size(); ++i) {
    if (ckpts[i].empty()) continue;
    try {
      res.arms[i].report = build_report(with_eta(base, etas[i]), ckpts[i], eval, out.empty() ? std::vector<std::string>{} : dirs[i]);
    } catch (const std::exception& e) {
      res.arms[i].errors.push_back(std::string("report: ") + e.what());
    }
  }
  return res;
}

inline std::vector<GroupKind> block_group_kinds(const ArchSpace& s, BlockKind bk) {
  if (bk == BlockKind::Encoder) return {GroupKind::FD, GroupKind::AH, GroupKind::ADIM, GroupKind::CK};
  std::vector<GroupKind> k{GroupKind::FD, GroupKind::AH, GroupKind::ADIM};
  if (s.split_decoder_attention) {
    k.push_back(GroupKind::XAH);
    k.push_back(GroupKind::XADIM);
  }
  return k;
}

// Layer-indexed rows 0..N-1; row 0 is the block nearest the input.
inline json arch_rows(const ArchSpace& s, const DerivedArch& a) {
  json out = json::object();
  for (auto bk : {BlockKind::Encoder, BlockKind::Decoder}) {
    const bool enc = bk == BlockKind::Encoder;
    json rows = json::array();
    for (std::size_t b = 0; b < (enc ? s.encoder_blocks : s.decoder_blocks); ++b) {
      json row{{"layer", b}};
      for (auto k : block_group_kinds(s, bk)) row[group_kind_name(k)] = a.get(s, bk, b, k);
      rows.push_back(std::move(row));
    }
    out[enc ? "encoder" : "decoder"] = std::move(rows);
  }
  return out;
}

inline std::string arch_table(const ArchSpace& s, const DerivedArch& a,
                              const std::optional<DerivedArch>& baseline = std::nullopt) {
  std::ostringstream o;
  for (auto bk : {BlockKind::Encoder, BlockKind::Decoder}) {
    const bool enc = bk == BlockKind::Encoder;
    const auto kinds = block_group_kinds(s, bk);
    o << (enc ? "encoder" : "decoder") << "\nlayer";
    for (auto k : kinds) {
      o << "\t" << group_kind_name(k);
      if (baseline) o << "\t" << group_kind_name(k) << "(base)";
    }
    o << "\n";
    for (std::size_t b = 0; b < (enc ? s.encoder_blocks : s.decoder_blocks); ++b) {
      o << b;
      for (auto k : kinds) {
        o << "\t" << a.get(s, bk, b, k);
        if (baseline) o << "\t" << baseline->get(s, bk, b, k);
      }
      o << "\n";
    }
  }
  return o.str();
}

// The architecture a checkpoint stands for: its own for models, the 1-best
// extraction for supernets.
inline DerivedArch checkpoint_arch(const Checkpoint& c) {
  if (c.kind == CheckpointKind::Model) return c.arch;
  return extract(logits_from(c), c.config.space);
}

}  // namespace hpadapt
