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

// Command-line front end. run_cli() never throws: every failure becomes one
// JSON error record on the error stream and a nonzero exit code.
//
//   0 success        2 invalid config or arguments    4 incompatible file
//   1 other failure  3 missing checkpoint or corpus   5 training diverged

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hpadapt/param_count.hpp"
#include "hpadapt/report.hpp"
#include "hpadapt/run_config.hpp"

namespace hpadapt::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kIncompatible = 4, kDiverged = 5 };

inline json error_record(const std::string& kind, int code, const std::string& message) {
  return json{{"error", kind}, {"exit_code", code}, {"message", message}};
}

inline void write_text(const fs::path& p, const std::string& text) { binary_io::atomic_write(p, text); }

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

using CorpusSet = std::map<std::string, Corpus>;

inline CorpusSet load_corpora(const RunConfig& c) {
  CorpusSet out;
  for (const auto& [name, path] : c.corpora) out.emplace(name, load_corpus(path));
  return out;
}

inline std::map<std::string, const Corpus*> pointers(const CorpusSet& s) {
  std::map<std::string, const Corpus*> out;
  for (const auto& [name, c] : s) out.emplace(name, &c);
  return out;
}

// Deterministic record of what was run, stored beside the report.
inline json resolved_config(const RunConfig& c) {
  Recipe r = c.recipe;
  r.resolve();
  json j{{"schema_version", c.schema_version}, {"recipe", to_json(r)}, {"seeds", c.seeds}};
  if (!c.sweep_etas.empty()) j["sweep"] = json{{"etas", c.sweep_etas}};
  return j;
}

inline int gen_data(const RunConfig& c, std::ostream& out) {
  for (const auto& [name, d] : c.domains) {
    const fs::path dir = domain_path(c, name);
    const Corpus corpus = generate(d.spec, d.counts);
    save_corpus(corpus, dir);
    out << json{{"domain", name},
                {"path", dir.string()},
                {"utterances", corpus.utterances.size()},
                {"fingerprint", corpus_fingerprint(corpus)}}
               .dump()
        << "\n";
  }
  return kOk;
}

inline void emit_report(const Report& rep, const fs::path& dir, std::ostream& out) {
  write_json(dir / "report.json", rep.to_json());
  write_text(dir / "report.txt", rep.table());
  out << rep.table();
}

inline int run(const RunConfig& c, bool resume, std::ostream& out) {
  const CorpusSet corpora = load_corpora(c);
  const auto ptrs = pointers(corpora);
  std::vector<std::pair<std::uint64_t, RecipeResult>> results;
  std::vector<std::pair<std::uint64_t, StageCheckpoints>> ckpts;
  std::vector<std::string> dirs;
  for (auto seed : c.seeds) {
    RecipeOptions opt;
    opt.workdir = c.output_dir / seed_dir_name(seed);
    opt.resume = resume;
    auto r = run_recipe(with_seed(c.recipe, seed), ptrs, opt);
    ckpts.emplace_back(seed, r.checkpoints);
    dirs.push_back(seed_dir_name(seed));
    results.emplace_back(seed, std::move(r));
  }
  write_json(c.output_dir / "recipe.json", resolved_config(c));
  write_json(c.output_dir / "timing.json", timing_record(results));
  emit_report(build_report(c.recipe, ckpts, corpora.at(c.recipe.eval_corpus), dirs), c.output_dir, out);
  return kOk;
}

inline int finish_sweep(const SweepResult& res, const fs::path& dir, std::ostream& out, std::ostream& err) {
  write_json(dir / "sweep.json", res.to_json());
  write_text(dir / "sweep.txt", res.table());
  out << res.table();
  bool failed = false;
  for (const auto& a : res.arms) {
    for (const auto& e : a.errors) {
      auto rec = error_record("sweep_arm_failed", kFailure, e);
      rec["eta"] = a.eta;
      err << rec.dump() << "\n";
      failed = true;
    }
  }
  return failed ? kFailure : kOk;
}

inline int sweep(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const CorpusSet corpora = load_corpora(c);
  const auto res = run_sweep(c.recipe, c.sweep_etas, c.seeds, pointers(corpora), corpora.at(c.recipe.eval_corpus),
                             c.output_dir);
  json timing = json::object();
  for (const auto& a : res.arms) timing[eta_dir_name(a.eta)] = timing_record(a.runs);
  write_json(c.output_dir / "recipe.json", resolved_config(c));
  write_json(c.output_dir / "timing.json", timing);
  return finish_sweep(res, c.output_dir, out, err);
}

// Rebuilds report.json, or sweep.json for sweep configs, from the stored
// checkpoints alone.
inline int regenerate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const Corpus eval = load_corpus(c.corpora.at(c.recipe.eval_corpus));
  if (c.command != "sweep") {
    std::vector<std::pair<std::uint64_t, StageCheckpoints>> ckpts;
    std::vector<std::string> dirs;
    for (auto seed : c.seeds) {
      ckpts.emplace_back(seed, load_stage_checkpoints(c.recipe, c.output_dir / seed_dir_name(seed)));
      dirs.push_back(seed_dir_name(seed));
    }
    emit_report(build_report(c.recipe, ckpts, eval, dirs), c.output_dir, out);
    return kOk;
  }
  SweepResult res;
  for (double eta : c.sweep_etas) {
    const Recipe r = with_eta(c.recipe, eta);
    std::vector<std::pair<std::uint64_t, StageCheckpoints>> ckpts;
    std::vector<std::string> dirs;
    for (auto seed : c.seeds) {
      const std::string rel = seed_dir_name(seed) + "/" + eta_dir_name(eta);
      ckpts.emplace_back(seed, load_stage_checkpoints(r, c.output_dir / rel));
      dirs.push_back(rel);
    }
    res.arms.push_back(SweepArm{eta, build_report(r, ckpts, eval, dirs), {}, {}});
  }
  return finish_sweep(res, c.output_dir, out, err);
}

inline json stratified_record(const Checkpoint& ck, const fs::path& ckpt, const Corpus& corpus,
                              const fs::path& corpus_dir, Split split) {
  if (ck.kind != CheckpointKind::Model) {
    throw IncompatibleCheckpoint(ckpt.string() + ": evaluate needs a model checkpoint, got a supernet");
  }
  const ConformerModel m = model_from(ck);
  return json{{"checkpoint", ckpt.string()},
              {"corpus", corpus_dir.string()},
              {"corpus_fingerprint", corpus_fingerprint(corpus)},
              {"split", split_name(split)},
              {"ter", to_json(stratified_eval(m, corpus, split))},
              {"param_count", m.param_count()},
              {"arch", m.arch().to_json(ck.config.space)}};
}

inline DerivedArch baseline_arch(const std::string& spec, const ArchSpace& s) {
  if (spec == "max") return DerivedArch::max_of(s);
  if (spec == "min") return DerivedArch::min_of(s);
  const Checkpoint b = load_checkpoint(spec);
  if (b.config.space != s) throw IncompatibleCheckpoint(spec + ": baseline has a different search space");
  return checkpoint_arch(b);
}

inline int dump_arch(const fs::path& ckpt, const std::string& baseline, const std::string& format,
                     std::ostream& out) {
  const Checkpoint c = load_checkpoint(ckpt);
  const ArchSpace& s = c.config.space;
  const DerivedArch a = checkpoint_arch(c);
  std::optional<DerivedArch> base;
  if (!baseline.empty()) base = baseline_arch(baseline, s);
  if (format == "json") {
    json j{{"checkpoint", ckpt.string()},
           {"kind", checkpoint_kind_name(c.kind)},
           {"param_count", param_count_formula(c.config, a)},
           {"layers", arch_rows(s, a)}};
    if (base) {
      j["baseline"] = baseline;
      j["baseline_param_count"] = param_count_formula(c.config, *base);
      j["baseline_layers"] = arch_rows(s, *base);
    }
    out << j.dump(2) << "\n";
  } else {
    out << "# " << ckpt.string() << " (" << checkpoint_kind_name(c.kind) << ", "
        << param_count_formula(c.config, a) << " params)\n";
    if (base) out << "# baseline " << baseline << " (" << param_count_formula(c.config, *base) << " params)\n";
    out << arch_table(s, a, base);
  }
  return kOk;
}

// Maps an exception to its exit code and error record.
inline int report_error(std::ostream& err) {
  auto emit = [&](json rec) {
    err << rec.dump() << "\n";
    return rec["exit_code"].get<int>();
  };
  try {
    throw;
  } catch (const ConfigError& e) {
    auto r = error_record("invalid_config", kConfig, e.message());
    r["field"] = e.field();
    return emit(r);
  } catch (const CheckpointNotFound& e) {
    auto r = error_record("missing_file", kMissing, e.what());
    r["file"] = e.path();
    return emit(r);
  } catch (const IncompatibleCheckpoint& e) {
    return emit(error_record("incompatible_file", kIncompatible, e.what()));
  } catch (const DivergenceError& e) {
    return emit(error_record("diverged", kDiverged, e.what()));
  } catch (const std::exception& e) {
    return emit(error_record("failure", kFailure, e.what()));
  }
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Conformer architecture search and domain adaptation", "hpadapt"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string config;
  std::vector<std::string> sets;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("config", config, "JSON config file")->required();
    sub->add_option("--set", sets, "Override a scalar field, e.g. --set stages[1].eta=0.03")->take_all();
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the corpora described under 'domains'");
  with_config(gen);
  bool no_resume = false;
  auto* run_cmd = app.add_subcommand("run", "Run the recipe once per seed and write the report");
  with_config(run_cmd);
  run_cmd->add_flag("--no-resume", no_resume, "Retrain stages even when a matching checkpoint exists");
  auto* sw = app.add_subcommand("sweep", "Run the recipe for every eta in sweep.etas");
  with_config(sw);

  auto* ev = app.add_subcommand("evaluate", "Regenerate reports from checkpoints, or score one checkpoint");
  std::string ckpt, corpus_dir, split = "test", format = "text", baseline;
  ev->add_option("config", config, "Run or sweep config whose checkpoints to re-score");
  ev->add_option("--set", sets, "Override a scalar config field")->take_all();
  ev->add_option("--checkpoint", ckpt, "Model checkpoint to score");
  ev->add_option("--corpus", corpus_dir, "Corpus directory");
  ev->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "heldout", "dev", "test"}));
  ev->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));

  auto* da = app.add_subcommand("dump-arch", "Print the per-layer architecture of a checkpoint");
  da->add_option("--checkpoint", ckpt, "Supernet or model checkpoint")->required();
  da->add_option("--baseline", baseline, "'max', 'min' or another checkpoint to print alongside");
  da->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));

  std::vector<std::string> argv(args.rbegin(), args.rend());
  if (!argv.empty()) argv.pop_back();  // program name
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    auto r = error_record("invalid_arguments", kConfig, e.what());
    r["field"] = "argv";
    err << r.dump() << "\n";
    return kConfig;
  }

  try {
    if (*gen) return gen_data(load_run_config(config, "gen-data", sets), out);
    if (*run_cmd) return run(load_run_config(config, "run", sets), !no_resume, out);
    if (*sw) return sweep(load_run_config(config, "sweep", sets), out, err);
    if (*da) return dump_arch(ckpt, baseline, format, out);
    if (!config.empty()) {
      if (!ckpt.empty() || !corpus_dir.empty()) {
        throw ConfigError("argv", "give either a config or --checkpoint/--corpus, not both");
      }
      return regenerate(load_run_config(config, "evaluate", sets), out, err);
    }
    if (ckpt.empty()) throw ConfigError("--checkpoint", "required when no config is given");
    if (corpus_dir.empty()) throw ConfigError("--corpus", "required when no config is given");
    const Checkpoint c = load_checkpoint(ckpt);
    const Corpus corpus = load_corpus(corpus_dir);
    const json rec = stratified_record(c, ckpt, corpus, corpus_dir, parse_split(split));
    if (format == "json") {
      out << rec.dump(2) << "\n";
    } else {
      const auto& t = rec["ter"];
      out << "split " << split << " (" << rec["param_count"].get<std::size_t>() << " params)\n";
      for (const char* k : {"overall", "shorter", "longer"}) {
        out << k << "\tTER " << t[k]["ter"].get<double>() << "\t" << t[k]["edits"].get<std::size_t>() << "/"
            << t[k]["ref_tokens"].get<std::size_t>() << " tokens\t" << t[k]["utterances"].get<std::size_t>()
            << " utterances\n";
      }
    }
    return kOk;
  } catch (...) {
    return report_error(err);
  }
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_cli(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace hpadapt::cli
