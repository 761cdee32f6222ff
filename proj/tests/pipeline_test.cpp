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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "fixtures.hpp"
#include "hpadapt/pipeline.hpp"

using namespace hpadapt;
namespace fs = std::filesystem;

namespace {

DomainSpec tiny_domain(const std::string& name, double mean_frames, std::uint64_t seed) {
  DomainSpec d;
  d.name = name;
  d.feat_dim = 4;
  d.vocab = 6;
  d.mean_frames = mean_frames;
  d.min_tokens = 1;
  d.max_tokens = 3;
  d.seed = seed;
  return d;
}

const Corpus& source() {
  static const Corpus c = generate(tiny_domain("source", 40, 1), SplitCounts{20, 4, 4});
  return c;
}

const Corpus& target() {
  static const Corpus c = generate(tiny_domain("target", 16, 2), SplitCounts{20, 4, 4});
  return c;
}

StageConfig stage(const std::string& name, StageKind kind, std::size_t epochs = 1) {
  StageConfig s;
  s.name = name;
  s.kind = kind;
  s.epochs = epochs;
  s.batch_size = 5;
  s.corpus = kind == StageKind::Pretrain || kind == StageKind::Train ? "source" : "target";
  return s;
}

Recipe two_arm_recipe() {
  Recipe r;
  r.model = oracle::tiny_config();
  r.stages = {stage("pretrain", StageKind::Pretrain, 2),
              stage("derive_src", StageKind::Derive),
              stage("param_only", StageKind::Finetune, 2),
              stage("adapt", StageKind::Adapt, 1),
              stage("derive_adapt", StageKind::Derive),
              stage("hyper", StageKind::Finetune, 1)};
  r.stages[3].from = "pretrain";
  return r;
}

const std::map<std::string, const Corpus*>& corpora() {
  static const std::map<std::string, const Corpus*> m{{"source", &source()}, {"target", &target()}};
  return m;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hpadapt_pipe_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

const Checkpoint& pretrained() {
  static const Checkpoint c =
      pretrain_supernet(source(), oracle::tiny_config(), stage("pretrain", StageKind::Pretrain, 1)).ckpt;
  return c;
}

Checkpoint derived(InitMode init = InitMode::Inherit) {
  auto s = stage("derive", StageKind::Derive);
  s.init = init;
  return derive_model(pretrained(), oracle::tiny_config(), s).ckpt;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST(CheckpointTest, SupernetRoundTripIsBitExact) {
  const auto dir = temp_dir("rt");
  const Checkpoint& c = pretrained();
  ASSERT_FALSE(c.optimizers.empty());
  ASSERT_GT(c.optimizers[0].second.step, 0);
  save_checkpoint(c, dir / "s.ckpt");
  const Checkpoint back = load_checkpoint(dir / "s.ckpt");
  EXPECT_TRUE(bitwise_equal(back, c));
  EXPECT_TRUE(back.weights.values_equal(c.weights));
  EXPECT_EQ(back.logits, c.logits);
  EXPECT_EQ(back.optimizers[0].second, c.optimizers[0].second);
  EXPECT_EQ(back.rng_state, c.rng_state);
  EXPECT_EQ(back.lineage, c.lineage);
  EXPECT_EQ(back.config, c.config);
  // Saving the loaded copy reproduces the file byte for byte.
  save_checkpoint(back, dir / "t.ckpt");
  EXPECT_EQ(read_file(dir / "s.ckpt"), read_file(dir / "t.ckpt"));
  fs::remove_all(dir);
}

TEST(CheckpointTest, ModelRoundTripKeepsArch) {
  const Checkpoint c = derived();
  const Checkpoint back = deserialize(serialize(c));
  EXPECT_TRUE(bitwise_equal(back, c));
  EXPECT_EQ(back.kind, CheckpointKind::Model);
  EXPECT_EQ(back.arch, c.arch);
  EXPECT_TRUE(back.logits.empty());
}

TEST(CheckpointTest, SignedZeroAndExtremesSurvive) {
  Checkpoint c = derived();
  auto d = c.weights.items()[0].second.mutable_data();
  d[0] = -0.0;
  d[1] = std::numeric_limits<double>::denorm_min();
  d[2] = std::numeric_limits<double>::max();
  const Checkpoint back = deserialize(serialize(c));
  EXPECT_TRUE(std::signbit(back.weights.items()[0].second[0]));
  EXPECT_EQ(back.weights.items()[0].second[1], std::numeric_limits<double>::denorm_min());
  EXPECT_TRUE(bitwise_equal(back, c));
}

TEST(CheckpointTest, CorruptionIsRejected) {
  std::string bytes = serialize(derived());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize(bad_magic), IncompatibleCheckpoint);
  auto bad_version = bytes;
  bad_version[8] = 99;
  try {
    deserialize(bad_version);
    FAIL();
  } catch (const IncompatibleCheckpoint& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos);
  }
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() / 2)), IncompatibleCheckpoint);
  EXPECT_THROW(deserialize(""), IncompatibleCheckpoint);
}

TEST(CheckpointTest, MissingFileIsNotFound) {
  try {
    load_checkpoint("/nonexistent/x.ckpt");
    FAIL();
  } catch (const CheckpointNotFound& e) {
    EXPECT_EQ(e.path(), "/nonexistent/x.ckpt");
  }
}

TEST(CheckpointTest, AtomicWriteLeavesNoTemporaries) {
  const auto dir = temp_dir("atomic");
  save_checkpoint(derived(), dir / "m.ckpt");
  save_checkpoint(derived(InitMode::Fresh), dir / "m.ckpt");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++files;
    EXPECT_EQ(e.path().filename(), "m.ckpt");
  }
  EXPECT_EQ(files, 1u);
  EXPECT_TRUE(bitwise_equal(load_checkpoint(dir / "m.ckpt"), derived(InitMode::Fresh)));
  fs::remove_all(dir);
}

TEST(PretrainTest, ZeroEpochsEqualsInitialization) {
  const auto cfg = oracle::tiny_config();
  const auto out = pretrain_supernet(source(), cfg, stage("p", StageKind::Pretrain, 0)).ckpt;
  Rng rng(1);
  const Supernet fresh(cfg, rng);
  EXPECT_TRUE(out.weights.values_equal(fresh.weights()));
  for (const auto& g : out.logits)
    for (double v : g) EXPECT_EQ(v, 0.0);
  ASSERT_EQ(out.lineage.size(), 1u);
  EXPECT_EQ(out.lineage[0]["kind"], "pretrain");
  EXPECT_EQ(out.lineage[0]["status"], "complete");
}

TEST(PretrainTest, FixedSeedIsBitReproducible) {
  const auto cfg = oracle::tiny_config();
  const auto sc = stage("pretrain", StageKind::Pretrain, 1);
  EXPECT_TRUE(bitwise_equal(pretrain_supernet(source(), cfg, sc).ckpt, pretrained()));
  auto other = sc;
  other.seed = 2;
  EXPECT_FALSE(bitwise_equal(pretrain_supernet(source(), cfg, other).ckpt, pretrained()));
}

TEST(PretrainTest, UpdatesWeightsAndLogitsAndRecordsEpochs) {
  const Checkpoint& c = pretrained();
  Rng rng(1);
  const Supernet fresh(oracle::tiny_config(), rng);
  EXPECT_FALSE(c.weights.values_equal(fresh.weights()));
  bool moved = false;
  for (const auto& g : c.logits)
    for (double v : g) moved |= v != 0.0;
  EXPECT_TRUE(moved);
  const auto& m = c.lineage.back()["metrics"];
  ASSERT_EQ(m["epochs"].size(), 1u);
  EXPECT_TRUE(std::isfinite(m["epochs"][0]["train_loss"].get<double>()));
  EXPECT_EQ(m["param_count"].get<std::size_t>(),
            param_count_formula(c.config, extract(logits_from(c), c.config.space)));
}

TEST(PretrainTest, IndependentLogitEpochBudget) {
  auto sc = stage("p", StageKind::Pretrain, 0);
  sc.logit_epochs = 1;
  const auto c = pretrain_supernet(source(), oracle::tiny_config(), sc).ckpt;
  Rng rng(1);
  const Supernet fresh(oracle::tiny_config(), rng);
  EXPECT_TRUE(c.weights.values_equal(fresh.weights()));
  bool moved = false;
  for (const auto& g : c.logits)
    for (double v : g) moved |= v != 0.0;
  EXPECT_TRUE(moved);
}

TEST(PretrainTest, DivergenceKeepsLastGoodCheckpoint) {
  Corpus bad = source();
  for (auto& u : bad.utterances)
    if (u.split == Split::Train) u.features[0] = std::nan("");
  Recipe r;
  r.model = oracle::tiny_config();
  r.stages = {stage("pretrain", StageKind::Pretrain, 2)};
  const auto dir = temp_dir("diverge");
  RecipeOptions opt;
  opt.workdir = dir;
  EXPECT_THROW(run_recipe(r, {{"source", &bad}}, opt), DivergenceError);
  EXPECT_FALSE(fs::exists(dir / "pretrain.ckpt"));
  const Checkpoint last = load_checkpoint(dir / "pretrain.partial.ckpt");
  EXPECT_EQ(last.lineage.back()["status"], "partial");
  EXPECT_EQ(last.lineage.back()["epochs_completed"], 0);
  Rng rng(1);
  EXPECT_TRUE(last.weights.values_equal(Supernet(r.model, rng).weights()));
  fs::remove_all(dir);
}

TEST(AdaptTest, ZeroEpochsLeavesLogitsUnchanged) {
  const auto out = adapt_supernet(pretrained(), target(), oracle::tiny_config(),
                                  stage("a", StageKind::Adapt, 0)).ckpt;
  EXPECT_EQ(out.logits, pretrained().logits);
  EXPECT_TRUE(out.weights.values_equal(pretrained().weights));
  ASSERT_EQ(out.lineage.size(), 2u);
  EXPECT_EQ(out.lineage[0], pretrained().lineage[0]);
}

TEST(AdaptTest, UpdatesBothWeightsAndLogits) {
  const auto out = adapt_supernet(pretrained(), target(), oracle::tiny_config(),
                                  stage("a", StageKind::Adapt, 1)).ckpt;
  EXPECT_NE(out.logits, pretrained().logits);
  EXPECT_FALSE(out.weights.values_equal(pretrained().weights));
}

TEST(AdaptTest, SpaceMismatchIsIncompatible) {
  auto cfg = oracle::tiny_config();
  cfg.space.ck = {3, 5};
  EXPECT_THROW(adapt_supernet(pretrained(), target(), cfg, stage("a", StageKind::Adapt, 1)),
               IncompatibleCheckpoint);
  EXPECT_THROW(adapt_supernet(derived(), target(), oracle::tiny_config(), stage("a", StageKind::Adapt, 1)),
               IncompatibleCheckpoint);
}

TEST(DeriveTest, ExtractsArgmaxAndInheritsSlices) {
  const Checkpoint m = derived();
  const auto arch = extract(logits_from(pretrained()), pretrained().config.space);
  EXPECT_EQ(m.arch, arch);
  const auto expect = supernet_from(pretrained()).derive_weights(arch);
  EXPECT_TRUE(m.weights.values_equal(expect));
  EXPECT_EQ(m.lineage.back()["metrics"]["param_count"].get<std::size_t>(), m.weights.total_numel());
  EXPECT_FALSE(derived(InitMode::Fresh).weights.values_equal(m.weights));
}

TEST(FinetuneTest, ZeroEpochsFlagOffKeepsWeights) {
  const Checkpoint in = derived();
  const auto out = parameter_finetune(in, target(), in.config, stage("f", StageKind::Finetune, 0)).ckpt;
  EXPECT_TRUE(out.weights.values_equal(in.weights));
  EXPECT_EQ(out.arch, in.arch);
}

TEST(FinetuneTest, ReinitTouchesOnlyOutputLayers) {
  const Checkpoint in = derived();
  auto sc = stage("f", StageKind::Finetune, 0);
  sc.reinit_output_layer = true;
  const auto out = parameter_finetune(in, target(), in.config, sc).ckpt;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < in.weights.size(); ++i) {
    const auto& [name, a] = in.weights.items()[i];
    const auto& b = out.weights.items()[i].second;
    const bool same = std::equal(a.data().begin(), a.data().end(), b.data().begin());
    if (is_output_layer(name)) {
      if (name.find(".w") != std::string::npos) EXPECT_FALSE(same) << name;
      changed += !same;
    } else {
      EXPECT_TRUE(same) << name;
    }
  }
  EXPECT_GE(changed, 2u);
}

TEST(FinetuneTest, NeverMutatesArchOrSpace) {
  const Checkpoint in = derived();
  const auto out = parameter_finetune(in, target(), in.config, stage("f", StageKind::Finetune, 2)).ckpt;
  EXPECT_EQ(out.arch, in.arch);
  EXPECT_EQ(out.config, in.config);
  EXPECT_FALSE(out.weights.values_equal(in.weights));
}

TEST(FinetuneTest, EarlyStoppingOnFlatDevTer) {
  const Checkpoint in = derived();
  auto sc = stage("f", StageKind::Finetune, 6);
  sc.lr_weights = 0.0;  // dev TER can never strictly improve after epoch 0
  sc.patience = 2;
  const auto out = parameter_finetune(in, target(), in.config, sc);
  EXPECT_EQ(out.metrics["epochs"].size(), 3u);
  EXPECT_TRUE(out.metrics["stopped_early"].get<bool>());
  EXPECT_EQ(out.metrics["best_epoch"], 0);
  EXPECT_TRUE(out.ckpt.weights.values_equal(in.weights));
}

TEST(FinetuneTest, RejectsSupernetInput) {
  EXPECT_THROW(parameter_finetune(pretrained(), target(), oracle::tiny_config(), stage("f", StageKind::Finetune)),
               IncompatibleCheckpoint);
}

TEST(RecipeTest, TwoArmRecipeRunsAndReportsBothArms) {
  const auto res = run_recipe(two_arm_recipe(), corpora());
  EXPECT_EQ(res.stages.size(), 6u);
  auto r = two_arm_recipe();
  r.resolve();
  EXPECT_EQ(r.systems(), (std::vector<std::string>{"param_only", "hyper"}));
  // Lineage is append-only along each arm.
  const auto& hyper = res.at("hyper").lineage;
  ASSERT_EQ(hyper.size(), 4u);
  EXPECT_EQ(hyper[0], res.at("pretrain").lineage[0]);
  EXPECT_EQ(hyper[1], res.at("adapt").lineage[1]);
  EXPECT_EQ(hyper[2], res.at("derive_adapt").lineage[2]);
  EXPECT_EQ(res.at("param_only").lineage[1]["stage"], "derive_src");
  EXPECT_NO_THROW(check_lineage(res.at("hyper"), "hyper"));
  EXPECT_NO_THROW(check_lineage(res.at("param_only"), "param_only"));
}

TEST(RecipeTest, ReRunIsBitExact) {
  const auto a = run_recipe(two_arm_recipe(), corpora());
  const auto b = run_recipe(two_arm_recipe(), corpora());
  for (const auto& [name, ck] : a.checkpoints) EXPECT_TRUE(bitwise_equal(ck, b.at(name))) << name;
}

TEST(RecipeTest, ResumeMidRecipeEqualsUninterruptedRun) {
  const auto full = run_recipe(two_arm_recipe(), corpora());
  const auto dir = temp_dir("resume");
  RecipeOptions opt;
  opt.workdir = dir;
  auto head = two_arm_recipe();
  head.stages.resize(4);
  run_recipe(head, corpora(), opt);
  const auto resumed = run_recipe(two_arm_recipe(), corpora(), opt);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(resumed.stages[i].reused) << i;
  EXPECT_FALSE(resumed.stages[4].reused);
  for (const auto& [name, ck] : full.checkpoints) {
    EXPECT_TRUE(bitwise_equal(ck, resumed.at(name))) << name;
    EXPECT_TRUE(bitwise_equal(ck, load_checkpoint(dir / (name + ".ckpt")))) << name;
  }
  fs::remove_all(dir);
}

TEST(RecipeTest, ChangedStageConfigIsNotReused) {
  const auto dir = temp_dir("stale");
  RecipeOptions opt;
  opt.workdir = dir;
  auto r = two_arm_recipe();
  r.stages.resize(2);
  run_recipe(r, corpora(), opt);
  r.stages[0].seed = 9;
  const auto again = run_recipe(r, corpora(), opt);
  EXPECT_FALSE(again.stages[0].reused);
  EXPECT_FALSE(again.stages[1].reused);
  fs::remove_all(dir);
}

TEST(RecipeTest, BrokenLineageIsRefusedWithField) {
  auto expect_field = [](Recipe r, const std::string& field) {
    try {
      run_recipe(std::move(r), corpora());
      ADD_FAILURE() << "accepted broken recipe, expected " << field;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), field) << e.what();
    }
  };
  auto r = two_arm_recipe();
  r.stages[2].from = "pretrain";  // finetune on a supernet
  expect_field(r, "stages[2].from");
  r = two_arm_recipe();
  std::swap(r.stages[0], r.stages[1]);  // derive before pretrain
  expect_field(r, "stages[0].from");
  r = two_arm_recipe();
  r.stages[4].from = "hyper";  // forward reference
  expect_field(r, "stages[4].from");
  r = two_arm_recipe();
  r.stages[3].name = "pretrain";
  expect_field(r, "stages[3].name");
  r = two_arm_recipe();
  r.stages[3].from = "derive_src";  // adapt a model
  expect_field(r, "stages[3].from");
  r = two_arm_recipe();
  r.stages[2].corpus = "clinic";
  expect_field(r, "stages[2].corpus");
}

TEST(RecipeTest, CheckpointLineageRules) {
  Checkpoint c = derived();
  EXPECT_NO_THROW(check_lineage(c, "m"));
  c.lineage.erase(c.lineage.begin());  // derive with no pretrain
  EXPECT_THROW(check_lineage(c, "m"), ConfigError);
  c = derived();
  c.kind = CheckpointKind::Supernet;
  EXPECT_THROW(check_lineage(c, "m"), ConfigError);
}

TEST(StageConfigTest, StrictParse) {
  const auto ok = parse_stage_config(json::parse(R"({"name":"a","kind":"adapt","epochs":3,"eta":0.03,
      "temperature":{"start":1.0,"end":0.2}})"), "stages[1]");
  EXPECT_EQ(ok.corpus, "target");
  EXPECT_EQ(ok.search_logit_epochs(), 3u);
  EXPECT_DOUBLE_EQ(ok.temperature.end, 0.2);
  EXPECT_EQ(parse_stage_config(to_json(ok), "x").kind, StageKind::Adapt);
  EXPECT_EQ(to_json(parse_stage_config(to_json(ok), "x")), to_json(ok));

  auto field_of = [](const char* text) {
    try {
      parse_stage_config(json::parse(text), "stages[0]");
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<accepted>");
  };
  EXPECT_EQ(field_of(R"({"name":"a","kind":"adapt","epochz":3})"), "stages[0].epochz");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"finetune","eta":0.1})"), "stages[0].eta");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"derive","epochs":1})"), "stages[0].epochs");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"search"})"), "stages[0].kind");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"train","epochs":-1})"), "stages[0].epochs");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"train","epochs":1.5})"), "stages[0].epochs");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"adapt","eta":-1})"), "stages[0].eta");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"adapt","temperature":{"start":0.1,"end":1}})"),
            "stages[0].temperature.start");
  EXPECT_EQ(field_of(R"({"name":"a","kind":"adapt","temperature":{"stop":1}})"), "stages[0].temperature.stop");
  EXPECT_EQ(field_of(R"({"kind":"adapt"})"), "stages[0].name");
}
