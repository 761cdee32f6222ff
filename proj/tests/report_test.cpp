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
#include <unistd.h>

#include "fixtures.hpp"
#include "hpadapt/report.hpp"

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
  static const Corpus c = generate(tiny_domain("target", 16, 2), SplitCounts{20, 4, 9});
  return c;
}

const std::map<std::string, const Corpus*>& corpora() {
  static const std::map<std::string, const Corpus*> m{{"source", &source()}, {"target", &target()}};
  return m;
}

StageConfig stage(const std::string& name, StageKind kind, const std::string& from, std::size_t epochs = 1) {
  StageConfig s;
  s.name = name;
  s.kind = kind;
  s.from = from;
  s.epochs = epochs;
  s.batch_size = 5;
  s.corpus = kind == StageKind::Pretrain ? "source" : "target";
  return s;
}

Recipe two_arm() {
  Recipe r;
  r.model = oracle::tiny_config();
  r.stages = {stage("pretrain", StageKind::Pretrain, "", 1),
              stage("adapt", StageKind::Adapt, "pretrain"),
              stage("derive_hyper", StageKind::Derive, "adapt"),
              stage("hyper", StageKind::Finetune, "derive_hyper"),
              stage("derive_param", StageKind::Derive, "pretrain"),
              stage("param_only", StageKind::Finetune, "derive_param")};
  r.stages[1].eta_scale = 1000.0;
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("hpadapt_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(StratifiedScore, PerfectRecognizerGivesZeroEverywhere) {
  const auto utts = target().split(Split::Test);
  const auto s = stratified_score(utts, [](const Utterance& u) { return u.tokens; });
  EXPECT_EQ(s.overall.ter, 0.0);
  EXPECT_EQ(s.shorter.ter, 0.0);
  EXPECT_EQ(s.longer.ter, 0.0);
  EXPECT_EQ(s.overall.utterances, utts.size());
}

TEST(StratifiedScore, EmptyHypothesesCostEveryReferenceToken) {
  const auto utts = target().split(Split::Test);
  const auto s = stratified_score(utts, [](const Utterance&) { return std::vector<int>{}; });
  EXPECT_EQ(s.overall.ter, 1.0);
  EXPECT_EQ(s.shorter.ter, 1.0);
  EXPECT_EQ(s.longer.ter, 1.0);
}

TEST(StratifiedEval, HalvesPartitionTheTestSplit) {
  Rng rng(3);
  const auto ck = derive_model(init_supernet(oracle::tiny_config(), rng), oracle::tiny_config(),
                               stage("d", StageKind::Derive, "x"))
                      .ckpt;
  const auto s = stratified_eval(model_from(ck), target());
  const auto utts = target().split(Split::Test);
  EXPECT_EQ(s.shorter.utterances + s.longer.utterances, utts.size());
  EXPECT_EQ(s.overall.utterances, utts.size());
  EXPECT_EQ(s.shorter.edits + s.longer.edits, s.overall.edits);
  EXPECT_EQ(s.shorter.ref_tokens + s.longer.ref_tokens, s.overall.ref_tokens);
  std::size_t ref = 0;
  for (const auto* u : utts) ref += u->tokens.size();
  EXPECT_EQ(s.overall.ref_tokens, ref);
  EXPECT_GE(s.shorter.utterances, s.longer.utterances);
}

TEST(StratifiedEval, EmptySplitIsRejected) {
  Corpus c = target();
  std::erase_if(c.utterances, [](const Utterance& u) { return u.split == Split::Test; });
  Rng rng(3);
  const auto ck = derive_model(init_supernet(oracle::tiny_config(), rng), oracle::tiny_config(),
                               stage("d", StageKind::Derive, "x"))
                      .ckpt;
  EXPECT_THROW(stratified_eval(model_from(ck), c), InvalidArgument);
}

TEST(ReportHelpers, MedianOfOddAndEvenSets) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_EQ(median({7.0}), 7.0);
}

TEST(ReportHelpers, EtaDependenceFollowsAdaptDescendants) {
  const auto dep = eta_dependent_stages(two_arm());
  EXPECT_EQ(dep, (std::set<std::string>{"adapt", "derive_hyper", "hyper"}));
  const Recipe r = with_eta(two_arm(), 0.25);
  for (const auto& s : r.stages) EXPECT_EQ(s.eta, s.kind == StageKind::Adapt ? 0.25 : 0.0) << s.name;
  for (const auto& s : with_seed(r, 9).stages) EXPECT_EQ(s.seed, 9u);
}

TEST(ReportHelpers, LineagePenaltyIsTheLastAdaptStage) {
  json lineage = json::array();
  EXPECT_EQ(lineage_penalty(lineage).eta, 0.0);
  lineage.push_back(json{{"kind", "pretrain"}, {"config", {{"eta", 5.0}, {"eta_scale", 2.0}}}});
  lineage.push_back(json{{"kind", "adapt"}, {"config", {{"eta", 0.03}, {"eta_scale", 1000.0}}}});
  lineage.push_back(json{{"kind", "derive"}, {"config", json::object()}});
  const auto p = lineage_penalty(lineage);
  EXPECT_EQ(p.eta, 0.03);
  EXPECT_EQ(p.eta_scale, 1000.0);
}

TEST(Report, ListsBothArmsAndIsDeterministic) {
  const Recipe r = two_arm();
  const auto run = run_recipe(with_seed(r, 1), corpora());
  const Report a = build_report(r, {{1, run.checkpoints}}, target());
  const Report b = build_report(r, {{1, run.checkpoints}}, target());
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(a.system_names(), (std::vector<std::string>{"hyper", "param_only"}));
  ASSERT_EQ(a.systems.size(), 2u);
  for (const auto& s : a.systems) {
    EXPECT_EQ(s.param_count, run.at(s.system).weights.total_numel());
    EXPECT_EQ(s.arch, run.at(s.system).arch.to_json(r.model.space));
    EXPECT_EQ(s.ter.overall.utterances, target().split(Split::Test).size());
  }
  const json j = a.to_json();
  EXPECT_EQ(j["eval_corpus"], corpus_fingerprint(target()));
  EXPECT_TRUE(j["stages"]["1"].contains("adapt"));
  EXPECT_EQ(j["summary"].size(), 2u);
  EXPECT_NE(a.table().find("param_only"), std::string::npos);
}

TEST(Report, MissingStageCheckpointIsAnError) {
  const Recipe r = two_arm();
  auto run = run_recipe(with_seed(r, 1), corpora());
  run.checkpoints.erase("adapt");
  EXPECT_THROW(build_report(r, {{1, run.checkpoints}}, target()), InvalidArgument);
}

TEST(Sweep, SingleEtaMatchesAPlainRun) {
  const Recipe r = two_arm();
  const auto sw = run_sweep(r, {0.03}, {2}, corpora(), target());
  ASSERT_EQ(sw.arms.size(), 1u);
  ASSERT_TRUE(sw.arms[0].errors.empty());
  const auto plain = run_recipe(with_seed(with_eta(r, 0.03), 2), corpora());
  const auto& swept = sw.arms[0].runs.at(0).second;
  for (const auto& s : r.stages) EXPECT_TRUE(bitwise_equal(swept.at(s.name), plain.at(s.name))) << s.name;
  const Report rep = build_report(with_eta(r, 0.03), {{2, plain.checkpoints}}, target());
  EXPECT_EQ(sw.arms[0].report->to_json(), rep.to_json());
}

TEST(Sweep, SharedStagesRunOncePerSeed) {
  const auto sw = run_sweep(two_arm(), {0.0, 0.5}, {1}, corpora(), target());
  ASSERT_EQ(sw.arms.size(), 2u);
  const auto& a = sw.arms[0].runs.at(0).second;
  const auto& b = sw.arms[1].runs.at(0).second;
  for (const char* s : {"pretrain", "derive_param", "param_only"}) {
    EXPECT_TRUE(bitwise_equal(a.at(s), b.at(s))) << s;
  }
  for (const auto& st : b.stages) {
    EXPECT_EQ(st.reused, st.name == "pretrain" || st.name == "derive_param" || st.name == "param_only") << st.name;
  }
  EXPECT_EQ(sw.to_json()["rows"].size(), 4u);
}

TEST(Sweep, FailingArmDoesNotAbortTheOthers) {
  Recipe r = two_arm();
  r.stages[1].eta_scale = 1e6;  // with eta 1e308 the penalty overflows to inf
  const auto sw = run_sweep(r, {0.0, 1e308}, {1}, corpora(), target());
  ASSERT_EQ(sw.arms.size(), 2u);
  EXPECT_TRUE(sw.arms[0].errors.empty());
  ASSERT_TRUE(sw.arms[0].report.has_value());
  EXPECT_FALSE(sw.arms[1].report.has_value());
  ASSERT_EQ(sw.arms[1].errors.size(), 1u);
  EXPECT_EQ(sw.to_json()["errors"].size(), 1u);
  EXPECT_NE(sw.table().find("failed"), std::string::npos);
}

TEST(Sweep, RejectsNegativeEta) {
  try {
    run_sweep(two_arm(), {0.0, -0.1}, {1}, corpora(), target());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "sweep.etas[1]");
  }
  EXPECT_THROW(run_sweep(two_arm(), {}, {1}, corpora(), target()), ConfigError);
}

TEST(Sweep, ReportRegenerationFromDiskIsIdempotent) {
  TempDir dir("sweep_regen");
  const Recipe r = two_arm();
  const auto sw = run_sweep(r, {0.0, 0.5}, {1, 2}, corpora(), target(), dir.path);
  for (const auto& arm : sw.arms) {
    ASSERT_TRUE(arm.report.has_value());
    const Recipe ra = with_eta(r, arm.eta);
    std::vector<std::pair<std::uint64_t, StageCheckpoints>> runs;
    std::vector<std::string> rel;
    for (std::uint64_t seed : {1, 2}) {
      rel.push_back(seed_dir_name(seed) + "/" + eta_dir_name(arm.eta));
      runs.emplace_back(seed, load_stage_checkpoints(ra, dir.path / rel.back()));
    }
    const json first = build_report(ra, runs, target(), rel).to_json();
    EXPECT_EQ(first, arm.report->to_json());
    EXPECT_EQ(first.dump(), build_report(ra, runs, target(), rel).to_json().dump());
    EXPECT_TRUE(fs::exists(dir.path / first["systems"][0]["checkpoint"].get<std::string>()));
  }
  EXPECT_TRUE(fs::exists(dir.path / "seed_1" / "shared" / "pretrain.ckpt"));
}

TEST(ArchTable, LayerIndexedRowsFromTheBottom) {
  const auto cfg = oracle::tiny_config();
  const auto& s = cfg.space;
  Rng rng(5);
  const DerivedArch a = DerivedArch::random(s, rng);
  const std::string t = arch_table(s, a);
  std::istringstream in(t);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 2 + s.encoder_blocks + 2 + s.decoder_blocks);
  EXPECT_EQ(lines[0], "encoder");
  EXPECT_EQ(lines[1], "layer\tFD\tAH\tADIM\tCK");
  for (std::size_t b = 0; b < s.encoder_blocks; ++b) {
    std::ostringstream want;
    want << b << "\t" << a.get(s, BlockKind::Encoder, b, GroupKind::FD) << "\t"
         << a.get(s, BlockKind::Encoder, b, GroupKind::AH) << "\t" << a.get(s, BlockKind::Encoder, b, GroupKind::ADIM)
         << "\t" << a.get(s, BlockKind::Encoder, b, GroupKind::CK);
    EXPECT_EQ(lines[2 + b], want.str());
  }
  EXPECT_EQ(lines[2 + s.encoder_blocks], "decoder");

  const json rows = arch_rows(s, a);
  ASSERT_EQ(rows["encoder"].size(), s.encoder_blocks);
  ASSERT_EQ(rows["decoder"].size(), s.decoder_blocks);
  EXPECT_EQ(rows["encoder"][0]["layer"], 0);
  EXPECT_EQ(rows["encoder"][0]["CK"], a.get(s, BlockKind::Encoder, 0, GroupKind::CK));
}

TEST(ArchTable, BaselineColumnsSitBesideEachGroup) {
  const auto cfg = oracle::tiny_config(true);
  const auto& s = cfg.space;
  const std::string t = arch_table(s, DerivedArch::min_of(s), DerivedArch::max_of(s));
  EXPECT_NE(t.find("layer\tFD\tFD(base)\tAH\tAH(base)\tADIM\tADIM(base)\tXAH\tXAH(base)"), std::string::npos);
  std::ostringstream row0;
  row0 << "\n0\t" << s.fd.front() << "\t" << s.fd.back() << "\t";
  EXPECT_NE(t.find(row0.str()), std::string::npos);
}

TEST(ArchTable, SupernetCheckpointShowsItsExtraction) {
  Rng rng(8);
  const auto ck = init_supernet(oracle::tiny_config(), rng);
  EXPECT_EQ(checkpoint_arch(ck), extract(logits_from(ck), ck.config.space));
}
