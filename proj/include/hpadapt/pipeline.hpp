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

// Stage orchestration over checkpoints.
//
//   pretrain  fresh supernet, alternating search on the source corpus
//   adapt     continue alternating search on another corpus
//   derive    1-best extraction + materialization (inherit | fresh)
//   train     ordinary weight training of a derived model
//   finetune  as train, optionally redrawing the output layers first
//
// Every stage appends one record to the checkpoint lineage. Records carry the
// stage config, a corpus fingerprint and metrics but no wall-clock, so equal
// seeds give bit-identical checkpoints.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hpadapt/arch_search.hpp"
#include "hpadapt/checkpoint.hpp"
#include "hpadapt/config_reader.hpp"
#include "hpadapt/losses.hpp"
#include "hpadapt/synth_data.hpp"

namespace hpadapt {

enum class StageKind { Pretrain, Adapt, Derive, Train, Finetune };

inline const char* stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::Pretrain: return "pretrain";
    case StageKind::Adapt: return "adapt";
    case StageKind::Derive: return "derive";
    case StageKind::Train: return "train";
    case StageKind::Finetune: return "finetune";
  }
  return "?";
}

inline std::optional<StageKind> parse_stage_kind(const std::string& s) {
  for (auto k : {StageKind::Pretrain, StageKind::Adapt, StageKind::Derive, StageKind::Train,
                 StageKind::Finetune})
    if (s == stage_kind_name(k)) return k;
  return std::nullopt;
}

inline CheckpointKind produces(StageKind k) {
  return k == StageKind::Pretrain || k == StageKind::Adapt ? CheckpointKind::Supernet
                                                           : CheckpointKind::Model;
}

// Input checkpoint kind; pretrain has none.
inline std::optional<CheckpointKind> consumes(StageKind k) {
  switch (k) {
    case StageKind::Pretrain: return std::nullopt;
    case StageKind::Adapt:
    case StageKind::Derive: return CheckpointKind::Supernet;
    default: return CheckpointKind::Model;
  }
}

struct StageConfig {
  std::string name;
  StageKind kind = StageKind::Pretrain;
  std::string from;  // producing stage; empty means the previous one
  std::string corpus = "source";
  std::size_t epochs = 1;                   // weight epochs
  std::optional<std::size_t> logit_epochs;  // search stages; defaults to epochs
  std::size_t batch_size = 8;
  double lr_weights = 1e-3;
  double lr_logits = 3e-3;
  double eta = 0.0;
  double eta_scale = 1.0;
  TempSchedule temperature;
  std::uint64_t seed = 1;
  InitMode init = InitMode::Inherit;
  bool reinit_output_layer = false;
  std::size_t patience = 3;  // dev-TER early stopping; 0 disables
  bool report = false;       // evaluate even when another stage consumes it

  bool is_search() const { return kind == StageKind::Pretrain || kind == StageKind::Adapt; }
  bool is_training() const { return kind == StageKind::Train || kind == StageKind::Finetune; }
  bool uses_corpus() const { return kind != StageKind::Derive; }
  std::size_t weight_epochs() const { return epochs; }
  std::size_t search_logit_epochs() const { return logit_epochs.value_or(epochs); }
  std::size_t schedule_epochs() const { return std::max(epochs, search_logit_epochs()); }
  Penalty penalty() const { return Penalty{eta, eta_scale}; }

  void validate(const std::string& path) const {
    auto f = [&](const char* k) { return path.empty() ? std::string(k) : path + "." + k; };
    if (name.empty()) throw ConfigError(f("name"), "must be nonempty");
    if (uses_corpus() && corpus.empty()) throw ConfigError(f("corpus"), "must be nonempty");
    if (batch_size == 0) throw ConfigError(f("batch_size"), "must be positive");
    if (!(lr_weights >= 0.0) || !std::isfinite(lr_weights)) throw ConfigError(f("lr_weights"), "must be finite and nonnegative");
    if (!(lr_logits >= 0.0) || !std::isfinite(lr_logits)) throw ConfigError(f("lr_logits"), "must be finite and nonnegative");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError(f("eta"), "must be finite and nonnegative");
    if (!(eta_scale > 0.0) || !std::isfinite(eta_scale)) throw ConfigError(f("eta_scale"), "must be finite and positive");
    if (!(temperature.end > 0.0)) throw ConfigError(f("temperature.end"), "must be positive");
    if (!(temperature.start >= temperature.end))
      throw ConfigError(f("temperature.start"), "must be at least temperature.end");
  }
};

inline json to_json(const StageConfig& s) {
  json j{{"name", s.name}, {"kind", stage_kind_name(s.kind)}, {"from", s.from}, {"seed", s.seed}};
  if (s.uses_corpus()) {
    j["corpus"] = s.corpus;
    j["epochs"] = s.epochs;
    j["batch_size"] = s.batch_size;
    j["lr_weights"] = s.lr_weights;
  }
  if (s.is_search()) {
    j["logit_epochs"] = s.search_logit_epochs();
    j["lr_logits"] = s.lr_logits;
    j["eta"] = s.eta;
    j["eta_scale"] = s.eta_scale;
    j["temperature"] = json{{"start", s.temperature.start}, {"end", s.temperature.end}};
  }
  if (s.kind == StageKind::Derive) j["init"] = init_mode_name(s.init);
  if (s.is_training()) j["patience"] = s.patience;
  if (s.kind == StageKind::Finetune) j["reinit_output_layer"] = s.reinit_output_layer;
  if (!s.is_search()) j["report"] = s.report;
  return j;
}

// Strict parse; keys that belong to other stage kinds are rejected by name.
inline StageConfig parse_stage_config(const json& j, const std::string& path) {
  ConfigReader r(j, path);
  StageConfig s;
  s.name = r.require<std::string>("name");
  const auto kind = r.require<std::string>("kind");
  auto k = parse_stage_kind(kind);
  if (!k) throw ConfigError(r.field("kind"), "unknown stage kind '" + kind + "'");
  s.kind = *k;
  s.from = r.get<std::string>("from", "");
  s.seed = r.get<std::uint64_t>("seed", s.seed);
  if (s.uses_corpus()) {
    s.corpus = r.get<std::string>("corpus", s.kind == StageKind::Pretrain || s.kind == StageKind::Train
                                                ? "source"
                                                : "target");
    s.epochs = r.get<std::size_t>("epochs", s.epochs);
    s.batch_size = r.get<std::size_t>("batch_size", s.batch_size);
    s.lr_weights = r.get<double>("lr_weights", s.lr_weights);
  }
  if (s.is_search()) {
    if (r.has("logit_epochs")) s.logit_epochs = r.get<std::size_t>("logit_epochs", 0);
    s.lr_logits = r.get<double>("lr_logits", s.lr_logits);
    s.eta = r.get<double>("eta", s.eta);
    s.eta_scale = r.get<double>("eta_scale", s.eta_scale);
    if (r.has("temperature")) {
      auto t = r.child("temperature");
      s.temperature.start = t.get<double>("start", s.temperature.start);
      s.temperature.end = t.get<double>("end", s.temperature.end);
      t.finish();
    }
  }
  if (s.kind == StageKind::Derive) {
    const auto init = r.get<std::string>("init", "inherit");
    if (init != "inherit" && init != "fresh") throw ConfigError(r.field("init"), "must be inherit or fresh");
    s.init = parse_init_mode(init);
  }
  if (s.is_training()) s.patience = r.get<std::size_t>("patience", s.patience);
  if (s.kind == StageKind::Finetune) s.reinit_output_layer = r.get<bool>("reinit_output_layer", false);
  if (!s.is_search()) s.report = r.get<bool>("report", false);

  static const std::vector<std::string> known{
      "name",       "kind",       "from",         "seed",      "corpus", "epochs",
      "batch_size", "lr_weights", "logit_epochs", "lr_logits", "eta",    "eta_scale",
      "temperature", "init",      "patience",     "reinit_output_layer", "report"};
  const json applicable = to_json(s);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!applicable.contains(it.key()) && std::find(known.begin(), known.end(), it.key()) != known.end()) {
      throw ConfigError(r.field(it.key()), std::string("not used by ") + stage_kind_name(s.kind) + " stages");
    }
  }
  r.finish();
  s.validate(path);
  return s;
}

// Stable identity of a corpus: FNV-1a over ids, splits, tokens and feature bits.
inline std::string corpus_fingerprint(const Corpus& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& u : c.utterances) {
    mix(u.id.data(), u.id.size());
    const int split = static_cast<int>(u.split);
    mix(&split, sizeof split);
    mix(u.tokens.data(), u.tokens.size() * sizeof(int));
    mix(u.features.data(), u.features.size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct StageOutput {
  Checkpoint ckpt;
  json metrics;
};

// Receives the last good state during long stages (initial state, then one
// call per completed epoch).
using ProgressSink = std::function<void(const Checkpoint&)>;

inline ErrorCounts evaluate(const ConformerModel& m, const std::vector<const Utterance*>& utts) {
  ErrorCounts e;
  for (const auto* u : utts) e.add(m.recognize(u->feature_tensor()).tokens, u->tokens);
  return e;
}

inline Supernet supernet_from(const Checkpoint& c) {
  if (c.kind != CheckpointKind::Supernet) throw IncompatibleCheckpoint("expected a supernet checkpoint");
  return Supernet(c.config, c.weights.clone(true));
}

inline ArchLogits logits_from(const Checkpoint& c) {
  if (c.kind != CheckpointKind::Supernet) throw IncompatibleCheckpoint("expected a supernet checkpoint");
  auto l = ArchLogits::for_space(c.config.space);
  if (c.logits.size() != l.size()) throw IncompatibleCheckpoint("logit group count disagrees with space");
  for (std::size_t g = 0; g < l.size(); ++g) {
    if (c.logits[g].size() != l[g].numel()) throw IncompatibleCheckpoint("logit group size disagrees with space");
    l.set(g, c.logits[g]);
  }
  return l;
}

inline ConformerModel model_from(const Checkpoint& c) {
  if (c.kind != CheckpointKind::Model) throw IncompatibleCheckpoint("expected a model checkpoint");
  return ConformerModel(c.config, c.arch, c.weights.clone(true));
}

namespace detail {

inline void shuffle(std::vector<const Utterance*>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

inline std::vector<Batch> epoch_batches(std::vector<const Utterance*> utts, std::size_t bs, Rng& rng) {
  shuffle(utts, rng);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < utts.size(); i += bs) {
    out.push_back(make_batch(std::vector<const Utterance*>(utts.begin() + i, utts.begin() + std::min(utts.size(), i + bs))));
  }
  return out;
}

inline json stage_record(const StageConfig& sc, const std::string& corpus_id, const std::string& status,
                         std::size_t epochs_done, json metrics) {
  json r{{"stage", sc.name},
         {"kind", stage_kind_name(sc.kind)},
         {"config", to_json(sc)},
         {"status", status},
         {"epochs_completed", epochs_done},
         {"metrics", std::move(metrics)}};
  if (!corpus_id.empty()) r["corpus"] = corpus_id;
  return r;
}

inline json appended(const json& lineage, json record) {
  json l = lineage;
  l.push_back(std::move(record));
  return l;
}

// Stage streams continue from the input checkpoint's generator, salted by the
// stage seed.
inline Rng stage_rng(const Checkpoint& in, std::uint64_t seed) {
  Rng base;
  base.set_state(in.rng_state);
  return Rng(base.derive(seed));
}

inline void require_kind(const Checkpoint& c, CheckpointKind k, const StageConfig& sc) {
  if (c.kind != k) {
    throw IncompatibleCheckpoint(std::string(stage_kind_name(sc.kind)) + " stage '" + sc.name +
                                 "' needs a " + checkpoint_kind_name(k) + " checkpoint, got a " +
                                 checkpoint_kind_name(c.kind));
  }
}

inline void require_config(const Checkpoint& c, const ModelConfig& cfg, const StageConfig& sc) {
  if (!(c.config == cfg)) {
    throw IncompatibleCheckpoint("stage '" + sc.name + "': checkpoint search space " +
                                 json(c.config).dump() + " does not match configured " + json(cfg).dump());
  }
}

inline void require_corpus(const Corpus& c, const ModelConfig& cfg, const StageConfig& sc) {
  if (c.spec.feat_dim != cfg.feat_dim || c.spec.vocab != cfg.vocab) {
    throw ConfigError(sc.name + ".corpus", "corpus feat_dim/vocab (" + std::to_string(c.spec.feat_dim) + "/" +
                                               std::to_string(c.spec.vocab) + ") disagree with the model (" +
                                               std::to_string(cfg.feat_dim) + "/" + std::to_string(cfg.vocab) + ")");
  }
}

inline Checkpoint supernet_checkpoint(const Supernet& net, const ArchLogits& logits, const Adam& wopt,
                                      const Adam& lopt, const Rng& rng, json lineage) {
  Checkpoint c;
  c.kind = CheckpointKind::Supernet;
  c.config = net.config();
  c.weights = net.weights().clone(true);
  c.logits = to_vectors(logits.tensors());
  c.optimizers = {{"weights", wopt.state()}, {"logits", lopt.state()}};
  c.rng_state = rng.state();
  c.lineage = std::move(lineage);
  return c;
}

inline Checkpoint model_checkpoint(const ConformerModel& m, const ParamSet& weights, const Adam* opt,
                                   const Rng& rng, json lineage) {
  Checkpoint c;
  c.kind = CheckpointKind::Model;
  c.config = m.config();
  c.arch = m.arch();
  c.weights = weights.clone(true);
  if (opt) c.optimizers = {{"weights", opt->state()}};
  c.rng_state = rng.state();
  c.lineage = std::move(lineage);
  return c;
}

inline json arch_summary(const ModelConfig& cfg, const DerivedArch& a) {
  return json{{"arch", a.to_json(cfg.space)}, {"param_count", param_count_formula(cfg, a)}};
}

// Alternating search from `start` (a supernet checkpoint) for the stage's
// epoch budget.
inline StageOutput search_stage(const Checkpoint& start, Rng rng, const Corpus& corpus,
                                const StageConfig& sc, const ProgressSink& sink) {
  Supernet net = supernet_from(start);
  ArchLogits logits = logits_from(start);
  SupernetSearch search{net, sc.penalty()};
  Adam wopt(net.weights().tensors(), AdamConfig{.lr = sc.lr_weights});
  Adam lopt(logits.tensors(), AdamConfig{.lr = sc.lr_logits});
  const auto fp = corpus_fingerprint(corpus);
  const auto train = corpus.split(Split::Train);
  const auto held = corpus.split(Split::Heldout);
  const std::size_t total = sc.schedule_epochs();
  if (total > 0 && (train.empty() || held.empty())) {
    throw InvalidArgument("stage '" + sc.name + "': corpus needs nonempty train and heldout splits");
  }

  json epochs = json::array();
  auto snapshot = [&](const std::string& status, std::size_t done) {
    json m{{"epochs", epochs}};
    m.update(arch_summary(net.config(), extract(logits, net.space())));
    return supernet_checkpoint(net, logits, wopt, lopt, rng,
                               appended(start.lineage, stage_record(sc, fp, status, done, std::move(m))));
  };
  if (sink) sink(snapshot("partial", 0));

  for (std::size_t e = 0; e < total; ++e) {
    const double T = sc.temperature.at(e, total);
    const StepPlan plan{e < sc.weight_epochs(), e < sc.search_logit_epochs()};
    const auto batches = epoch_batches(train, sc.batch_size, rng);
    auto held_order = held;
    shuffle(held_order, rng);
    std::size_t hpos = 0;
    double tl = 0.0, hl = 0.0;
    for (const auto& b : batches) {
      std::vector<const Utterance*> hb;
      for (std::size_t k = 0; k < sc.batch_size; ++k) hb.push_back(held_order[(hpos++) % held_order.size()]);
      StepLosses l;
      try {
        l = alternating_step(search, logits, b, make_batch(hb), wopt, lopt, T, rng, plan);
      } catch (const DivergenceError& err) {
        throw DivergenceError("stage '" + sc.name + "' epoch " + std::to_string(e) + ": " + err.what());
      }
      tl += l.train;
      hl += l.heldout;
    }
    const DerivedArch a = extract(logits, net.space());
    epochs.push_back(json{{"epoch", e},
                          {"temperature", T},
                          {"train_loss", tl / static_cast<double>(batches.size())},
                          {"heldout_loss", hl / static_cast<double>(batches.size())},
                          {"param_count", param_count_formula(net.config(), a)}});
    if (sink && e + 1 < total) sink(snapshot("partial", e + 1));
  }
  Checkpoint out = snapshot("complete", total);
  json metrics = out.lineage.back()["metrics"];
  return {std::move(out), std::move(metrics)};
}

}  // namespace detail

// Freshly initialized supernet with zero logits.
inline Checkpoint init_supernet(const ModelConfig& cfg, Rng& rng) {
  Supernet net(cfg, rng);
  const auto logits = ArchLogits::for_space(cfg.space);
  Checkpoint c;
  c.kind = CheckpointKind::Supernet;
  c.config = cfg;
  c.weights = net.weights().clone(true);
  c.logits = to_vectors(logits.tensors());
  c.rng_state = rng.state();
  return c;
}

inline StageOutput pretrain_supernet(const Corpus& source, const ModelConfig& cfg, const StageConfig& sc,
                                     const ProgressSink& sink = {}) {
  detail::require_corpus(source, cfg, sc);
  Rng rng(sc.seed);
  const Checkpoint start = init_supernet(cfg, rng);
  return detail::search_stage(start, rng, source, sc, sink);
}

inline StageOutput adapt_supernet(const Checkpoint& in, const Corpus& target, const ModelConfig& cfg,
                                  const StageConfig& sc, const ProgressSink& sink = {}) {
  detail::require_kind(in, CheckpointKind::Supernet, sc);
  detail::require_config(in, cfg, sc);
  detail::require_corpus(target, cfg, sc);
  return detail::search_stage(in, detail::stage_rng(in, sc.seed), target, sc, sink);
}

inline StageOutput derive_model(const Checkpoint& in, const ModelConfig& cfg, const StageConfig& sc) {
  detail::require_kind(in, CheckpointKind::Supernet, sc);
  detail::require_config(in, cfg, sc);
  Rng rng = detail::stage_rng(in, sc.seed);
  const Supernet net = supernet_from(in);
  const ArchLogits logits = logits_from(in);
  const DerivedArch arch = extract(logits, net.space());
  ConformerModel m = materialize(net, arch, sc.init, rng);
  json metrics = detail::arch_summary(cfg, arch);
  metrics["expected_param_count"] = param_count_formula(cfg, to_vectors(expected_weights(logits)));
  metrics["init"] = init_mode_name(sc.init);
  auto ck = detail::model_checkpoint(m, m.params(), nullptr, rng,
                                     detail::appended(in.lineage, detail::stage_record(sc, "", "complete", 0, metrics)));
  return {std::move(ck), std::move(metrics)};
}

// Output-layer tensors redrawn by `reinit_output_layer`.
inline bool is_output_layer(const std::string& name) {
  return name.rfind("ctc_out.", 0) == 0 || name.rfind("dec_out.", 0) == 0;
}

// Plain weight training of a materialized model. The architecture and
// config pass through untouched. With patience > 0 the returned weights are
// those of the epoch with the lowest dev TER; training stops after `patience`
// epochs without a strict improvement.
inline StageOutput train_model(const Checkpoint& in, const Corpus& corpus, const ModelConfig& cfg,
                               const StageConfig& sc, const ProgressSink& sink = {}) {
  detail::require_kind(in, CheckpointKind::Model, sc);
  detail::require_config(in, cfg, sc);
  detail::require_corpus(corpus, cfg, sc);
  Rng rng = detail::stage_rng(in, sc.seed);
  ConformerModel m = model_from(in);
  if (sc.kind == StageKind::Finetune && sc.reinit_output_layer) {
    std::vector<detail::ParamSpec> out_specs;
    for (const auto& sp : detail::layout(cfg, m.arch()))
      if (is_output_layer(sp.name)) out_specs.push_back(sp);
    const ParamSet fresh = detail::init_params(out_specs, rng);
    for (const auto& [name, t] : fresh.items()) {
      auto d = m.params().at(name).mutable_data();
      std::copy(t.data().begin(), t.data().end(), d.begin());
    }
  }
  const auto fp = corpus_fingerprint(corpus);
  const auto train = corpus.split(Split::Train);
  const auto dev = corpus.split(Split::Dev);
  if (sc.epochs > 0 && train.empty()) throw InvalidArgument("stage '" + sc.name + "': empty train split");
  const bool early = sc.patience > 0 && !dev.empty();

  Adam opt(m.params().tensors(), AdamConfig{.lr = sc.lr_weights});
  json epochs = json::array();
  std::optional<ParamSet> best;
  double best_ter = 0.0;
  std::size_t best_epoch = 0, bad = 0, done = 0;
  bool stopped = false;

  auto snapshot = [&](const std::string& status, const ParamSet& w) {
    json metrics{{"epochs", epochs}, {"param_count", m.param_count()}, {"stopped_early", stopped}};
    if (best) {
      metrics["best_epoch"] = best_epoch;
      metrics["best_dev_ter"] = best_ter;
    }
    metrics.update(detail::arch_summary(cfg, m.arch()));
    return detail::model_checkpoint(
        m, w, &opt, rng, detail::appended(in.lineage, detail::stage_record(sc, fp, status, done, metrics)));
  };
  if (sink) sink(snapshot("partial", m.params()));

  for (std::size_t e = 0; e < sc.epochs; ++e) {
    double tl = 0.0;
    const auto batches = detail::epoch_batches(train, sc.batch_size, rng);
    for (const auto& b : batches) {
      Tensor loss = task_loss(m.forward(b), b, cfg);
      const double v = loss.item();
      if (!std::isfinite(v)) {
        Tape::current().discard();
        throw DivergenceError("stage '" + sc.name + "' epoch " + std::to_string(e) + ": non-finite loss");
      }
      backward(loss);
      opt.step();
      tl += v;
    }
    done = e + 1;
    json rec{{"epoch", e}, {"train_loss", tl / static_cast<double>(batches.size())}};
    if (early) {
      const double ter = evaluate(m, dev).rate();
      rec["dev_ter"] = ter;
      if (!best || ter < best_ter) {
        best = m.params().clone(true);
        best_ter = ter;
        best_epoch = e;
        bad = 0;
      } else {
        ++bad;
      }
    }
    epochs.push_back(std::move(rec));
    if (early && bad >= sc.patience) {
      stopped = e + 1 < sc.epochs;
      break;
    }
    if (sink && e + 1 < sc.epochs) sink(snapshot("partial", m.params()));
  }
  Checkpoint out = snapshot("complete", best ? *best : m.params());
  json metrics = out.lineage.back()["metrics"];
  return {std::move(out), std::move(metrics)};
}

inline StageOutput parameter_finetune(const Checkpoint& in, const Corpus& target, const ModelConfig& cfg,
                                      const StageConfig& sc, const ProgressSink& sink = {}) {
  return train_model(in, target, cfg, sc, sink);
}

// Ordered stages over one model configuration. Systems are evaluated on the
// test split of `eval_corpus`.
struct Recipe {
  ModelConfig model;
  std::vector<StageConfig> stages;
  std::string eval_corpus = "target";

  const StageConfig& stage(const std::string& name) const {
    for (const auto& s : stages)
      if (s.name == name) return s;
    throw InvalidArgument("no stage named '" + name + "'");
  }

  // Fills empty `from` fields with the previous stage.
  void resolve() {
    for (std::size_t i = 1; i < stages.size(); ++i)
      if (stages[i].from.empty() && stages[i].kind != StageKind::Pretrain) stages[i].from = stages[i - 1].name;
  }

  // Lineage rules: pretrain starts a chain; adapt and derive consume a
  // supernet; train and finetune consume a model; inputs come earlier.
  void validate() const {
    model.validate();
    if (stages.empty()) throw ConfigError("stages", "recipe has no stages");
    std::map<std::string, StageKind> seen;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& s = stages[i];
      const std::string at = "stages[" + std::to_string(i) + "]";
      s.validate(at);
      if (seen.count(s.name)) throw ConfigError(at + ".name", "duplicate stage name '" + s.name + "'");
      const auto need = consumes(s.kind);
      if (!need) {
        if (!s.from.empty()) throw ConfigError(at + ".from", "pretrain starts a chain and takes no input");
      } else {
        if (s.from.empty()) {
          throw ConfigError(at + ".from", std::string(stage_kind_name(s.kind)) + " needs an input stage");
        }
        auto it = seen.find(s.from);
        if (it == seen.end()) {
          throw ConfigError(at + ".from", "'" + s.from + "' is not an earlier stage");
        }
        if (produces(it->second) != *need) {
          throw ConfigError(at + ".from", std::string(stage_kind_name(s.kind)) + " needs a " +
                                              checkpoint_kind_name(*need) + " but '" + s.from + "' (" +
                                              stage_kind_name(it->second) + ") produces a " +
                                              checkpoint_kind_name(produces(it->second)));
        }
      }
      seen[s.name] = s.kind;
    }
  }

  // Model stages to report: those no other stage consumes, plus flagged ones.
  std::vector<std::string> systems() const {
    std::vector<std::string> out;
    for (const auto& s : stages) {
      if (produces(s.kind) != CheckpointKind::Model) continue;
      const bool consumed = std::any_of(stages.begin(), stages.end(), [&](const StageConfig& o) {
        return o.from == s.name;
      });
      if (!consumed || s.report) out.push_back(s.name);
    }
    return out;
  }
};

inline json to_json(const Recipe& r) {
  json st = json::array();
  for (const auto& s : r.stages) st.push_back(to_json(s));
  return json{{"model", r.model}, {"stages", st}, {"eval_corpus", r.eval_corpus}};
}

// Checks that a checkpoint's recorded history obeys the lineage rules.
inline void check_lineage(const Checkpoint& c, const std::string& origin) {
  const json& l = c.lineage;
  auto bad = [&](std::size_t i, const std::string& why) {
    return ConfigError(origin + ".lineage[" + std::to_string(i) + "]", why);
  };
  std::optional<StageKind> prev;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (!l[i].is_object() || !l[i].contains("kind") || !l[i].contains("status")) throw bad(i, "malformed record");
    const auto k = parse_stage_kind(l[i]["kind"].get<std::string>());
    if (!k) throw bad(i, "unknown stage kind");
    if (l[i]["status"] != "complete" && i + 1 < l.size()) throw bad(i, "incomplete stage has successors");
    const auto need = consumes(*k);
    if (!prev && need) throw bad(i, std::string(stage_kind_name(*k)) + " cannot start a lineage");
    if (prev && !need) throw bad(i, "pretrain can only start a lineage");
    if (prev && need && produces(*prev) != *need) {
      throw bad(i, std::string(stage_kind_name(*k)) + " cannot follow " + stage_kind_name(*prev));
    }
    prev = k;
  }
  if (prev && produces(*prev) != c.kind) throw bad(l.size() - 1, "checkpoint kind disagrees with last stage");
}

struct RecipeOptions {
  std::filesystem::path workdir;  // empty: checkpoints stay in memory
  bool resume = true;             // reuse complete checkpoints whose lineage matches
  std::map<std::string, Checkpoint> preloaded;  // stage name -> finished checkpoint
};

struct StageRun {
  std::string name;
  StageKind kind;
  json metrics;
  bool reused = false;
  double seconds = 0.0;
};

struct RecipeResult {
  std::vector<StageRun> stages;
  std::map<std::string, Checkpoint> checkpoints;

  const Checkpoint& at(const std::string& name) const {
    auto it = checkpoints.find(name);
    if (it == checkpoints.end()) throw InvalidArgument("no checkpoint for stage '" + name + "'");
    return it->second;
  }
};

inline std::filesystem::path stage_checkpoint_path(const std::filesystem::path& workdir, const std::string& stage) {
  return workdir / (stage + ".ckpt");
}

namespace detail {

// A stored checkpoint can stand in for running `sc` on `input` when it is
// complete and its history is the input history plus this exact stage.
inline bool reusable(const Checkpoint& c, const json& input_lineage, const StageConfig& sc,
                     const std::string& corpus_id) {
  const json& l = c.lineage;
  if (l.size() != input_lineage.size() + 1) return false;
  for (std::size_t i = 0; i < input_lineage.size(); ++i)
    if (l[i] != input_lineage[i]) return false;
  const json& last = l.back();
  if (last.value("status", "") != "complete" || last.value("config", json()) != to_json(sc)) return false;
  return corpus_id.empty() || last.value("corpus", "") == corpus_id;
}

}  // namespace detail

// Runs the stages in order. With a workdir, each finished stage is saved as
// <workdir>/<stage>.ckpt and in-progress state as <stage>.partial.ckpt, which
// is left behind as the last good state if the stage diverges.
inline RecipeResult run_recipe(Recipe recipe, const std::map<std::string, const Corpus*>& corpora,
                               const RecipeOptions& opt = {}) {
  namespace fs = std::filesystem;
  recipe.resolve();
  recipe.validate();
  for (std::size_t i = 0; i < recipe.stages.size(); ++i) {
    const auto& s = recipe.stages[i];
    if (s.uses_corpus() && !corpora.count(s.corpus)) {
      throw ConfigError("stages[" + std::to_string(i) + "].corpus", "no corpus named '" + s.corpus + "'");
    }
  }

  RecipeResult res;
  for (const auto& sc : recipe.stages) {
    const auto t0 = std::chrono::steady_clock::now();
    const Corpus* corpus = sc.uses_corpus() ? corpora.at(sc.corpus) : nullptr;
    const Checkpoint* input = sc.from.empty() ? nullptr : &res.at(sc.from);
    const json input_lineage = input ? input->lineage : json::array();
    const std::string corpus_id = corpus ? corpus_fingerprint(*corpus) : "";
    StageRun run{sc.name, sc.kind, json(), false, 0.0};

    std::optional<Checkpoint> out;
    if (auto it = opt.preloaded.find(sc.name); it != opt.preloaded.end()) {
      if (!detail::reusable(it->second, input_lineage, sc, corpus_id)) {
        throw IncompatibleCheckpoint("preloaded checkpoint for stage '" + sc.name + "' has a different lineage");
      }
      out = it->second;
      run.reused = true;
    }
    const fs::path final_path = opt.workdir.empty() ? fs::path() : stage_checkpoint_path(opt.workdir, sc.name);
    if (!out && opt.resume && !final_path.empty() && fs::exists(final_path)) {
      Checkpoint c = load_checkpoint(final_path);
      if (detail::reusable(c, input_lineage, sc, corpus_id)) {
        out = std::move(c);
        run.reused = true;
      }
    }
    if (!out) {
      ProgressSink sink;
      fs::path partial;
      if (!final_path.empty()) {
        partial = opt.workdir / (sc.name + ".partial.ckpt");
        sink = [partial](const Checkpoint& c) { save_checkpoint(c, partial); };
      }
      StageOutput so;
      switch (sc.kind) {
        case StageKind::Pretrain: so = pretrain_supernet(*corpus, recipe.model, sc, sink); break;
        case StageKind::Adapt: so = adapt_supernet(*input, *corpus, recipe.model, sc, sink); break;
        case StageKind::Derive: so = derive_model(*input, recipe.model, sc); break;
        case StageKind::Train:
        case StageKind::Finetune: so = train_model(*input, *corpus, recipe.model, sc, sink); break;
      }
      out = std::move(so.ckpt);
      if (!final_path.empty()) {
        save_checkpoint(*out, final_path);
        fs::remove(partial);
      }
    } else if (!final_path.empty() && !fs::exists(final_path)) {
      save_checkpoint(*out, final_path);
    }
    run.metrics = out->lineage.back()["metrics"];
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.checkpoints.emplace(sc.name, std::move(*out));
    res.stages.push_back(std::move(run));
  }
  return res;
}

}  // namespace hpadapt
