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

// Acceptance gate: one PASS/FAIL line per criterion; exit status 1 when any
// criterion fails. Arguments select a subset (e.g. `acceptance 1 2 9`).
//
// Criteria 6-9 share one end-to-end sweep over a synthetic long-source /
// short-target pair in the reduced search space.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <unistd.h>

#include "ctc_oracle.hpp"
#include "fixtures.hpp"
#include "op_cases.hpp"
#include "hpadapt/losses.hpp"
#include "hpadapt/param_count.hpp"
#include "hpadapt/report.hpp"

using namespace hpadapt;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int n, const Verdict& v, double secs) {
  std::printf("%s criterion %d: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", n, v.detail.c_str(), secs);
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::string worst_op;
  std::size_t ops_checked = 0;
  for (const auto& oc : oracle::op_cases()) {
    const double e = oracle::check_op_case(oc, rng, 10);
    if (e > worst || !std::isfinite(e)) worst = e, worst_op = oc.name;
    ++ops_checked;
  }
  const std::vector<int> ref{2, 1, 2};
  double ctc_worst = 0.0;
  for (int p = 0; p < 10; ++p) {
    auto logits = oracle::random_tensor({6, 4}, rng, -2, 2);
    const auto r = oracle::gradcheck(
        [&](const std::vector<Tensor>& x) { return ctc_loss(ops::log_softmax(x[0], 1), ref); }, {logits}, rng);
    ctc_worst = std::max(ctc_worst, r.max_rel_error);
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-4 && ctc_worst < 1e-4 && secs < 60.0;
  return {pass, fmt("%zu ops + ctc_loss, 10 points each; worst op rel err %.2e (%s), ctc %.2e, %.1fs < 60s",
                    ops_checked, worst, worst_op.c_str(), ctc_worst, secs)};
}

Verdict gumbel_suite() {
  const auto t0 = Clock::now();
  Rng rng(99);
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(-6.0, 6.0);

  double norm_err = 0.0;
  bool nonneg = true;
  ArchLogits l({3, 4, 2, 6});
  for (int draw = 0; draw < 10000; ++draw) {
    for (std::size_t g = 0; g < l.size(); ++g) {
      std::vector<double> v(l[g].numel());
      for (auto& x : v) x = u(gen);
      l.set(g, v);
    }
    const double T = std::exp(std::uniform_real_distribution<double>(std::log(0.05), std::log(5.0))(gen));
    for (const auto& lam : sample_weights(l, T, rng)) {
      double s = 0.0;
      for (double v : lam.data()) {
        s += v;
        nonneg = nonneg && v >= 0.0;
      }
      norm_err = std::max(norm_err, std::abs(s - 1.0));
    }
  }

  double shift_err = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    ArchLogits a({5}), b({5});
    std::vector<double> v(5);
    for (auto& x : v) x = u(gen);
    const double c = u(gen);
    std::vector<double> w = v;
    for (auto& x : w) x += c;
    a.set(0, v);
    b.set(0, w);
    const auto noise = gumbel_noise(a, rng);
    for (double T : {1.0, 0.5, 0.1}) {
      const auto la = sample_weights(a, T, noise), lb = sample_weights(b, T, noise);
      for (std::size_t k = 0; k < 5; ++k) shift_err = std::max(shift_err, std::abs(la[0][k] - lb[0][k]));
    }
  }

  ArchLogits gap({3});
  gap.set(0, {2.0, 0.0, 0.0});
  std::vector<double> mean_max;
  for (double T : {1.0, 0.5, 0.1}) {
    Rng r(7);
    double acc = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const auto lam = sample_weights(gap, T, r);
      acc += *std::max_element(lam[0].data().begin(), lam[0].data().end());
    }
    mean_max.push_back(acc / n);
  }
  const double secs = seconds_since(t0);
  const bool pass = norm_err <= 1e-9 && nonneg && shift_err <= 1e-12 && mean_max[0] < mean_max[1] &&
                    mean_max[1] < mean_max[2] && mean_max[2] > 0.95 && secs < 30.0;
  return {pass, fmt("normalization err %.1e over 1e4 draws, shift err %.1e, mean max %.3f < %.3f < %.3f (T=1,.5,.1; gap 2)",
                    norm_err, shift_err, mean_max[0], mean_max[1], mean_max[2])};
}

Verdict ctc_oracle_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(31);
  double worst = 0.0;
  std::size_t instances = 0, infeasible = 0;
  bool infeasible_ok = true;
  for (std::size_t T = 1; T <= 4; ++T) {
    for (std::size_t V = 1; V <= 3; ++V) {
      std::vector<std::vector<int>> refs{{}};
      for (int a = 1; a < static_cast<int>(V); ++a) {
        refs.push_back({a});
        for (int b = 1; b < static_cast<int>(V); ++b) refs.push_back({a, b});
      }
      for (const auto& ref : refs) {
        for (int rep = 0; rep < 3; ++rep) {
          Tensor lp;
          {
            NoGradGuard ng;
            lp = ops::log_softmax(oracle::random_tensor({T, V}, rng, -3.0, 3.0, false), 1);
          }
          const std::vector<double> v(lp.data().begin(), lp.data().end());
          const double brute = oracle::ctc_brute_force(v, T, V, ref);
          if (ctc_min_frames(ref) > T) {
            ++infeasible;
            bool threw = false;
            try {
              ctc_loss(lp, ref);
            } catch (const InfeasibleAlignment&) {
              threw = true;
            }
            infeasible_ok = infeasible_ok && threw && std::isinf(brute);
            continue;
          }
          worst = std::max(worst, std::abs(ctc_loss(lp, ref).item() - brute));
          ++instances;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-8 && infeasible_ok && secs < 60.0,
          fmt("%zu feasible instances (T<=4, V<=3, |ref|<=2), max |diff| %.1e; %zu infeasible all rejected",
              instances, worst, infeasible)};
}

Verdict equivalence_suite() {
  const auto t0 = Clock::now();
  const auto cfg = oracle::reduced_config();
  Rng r(41);
  std::mt19937_64 rng(41);
  Supernet net(cfg, r);
  const auto batch = oracle::random_batch(cfg, 2, rng);
  double mixed_vs_hot = 0.0, model_vs_hot = 0.0;
  const int archs = 24;
  for (int i = 0; i < archs; ++i) {
    const auto arch = DerivedArch::random(cfg.space, r);
    const auto hot = net.one_hot_forward(batch, arch);
    mixed_vs_hot = std::max(mixed_vs_hot, oracle::max_abs_diff(net.mixed_forward(batch, one_hot_weights(cfg.space, arch)), hot));
    model_vs_hot = std::max(model_vs_hot, oracle::max_abs_diff(materialize(net, arch, InitMode::Inherit, r).forward(batch), hot));
  }
  const double secs = seconds_since(t0);
  return {mixed_vs_hot <= 1e-6 && model_vs_hot <= 1e-6 && secs < 300.0,
          fmt("%d random archs (D=32, 2 enc, 1 dec): mixed vs one-hot %.1e, materialized vs one-hot %.1e", archs,
              mixed_vs_hot, model_vs_hot)};
}

Verdict param_count_suite() {
  const auto cfg = oracle::reduced_config();
  Rng r(53);
  Supernet net(cfg, r);
  int exact = 0;
  const int archs = 20;
  for (int i = 0; i < archs; ++i) {
    const auto arch = DerivedArch::random(cfg.space, r);
    const auto model = materialize(net, arch, InitMode::Fresh, r);
    std::size_t enumerated = 0;
    for (const auto& [name, t] : model.params().items()) enumerated += t.numel();
    if (enumerated == param_count_formula(cfg, arch) && model.param_count() == enumerated) ++exact;
  }
  return {exact == archs, fmt("%d/%d random archs: formula == enumerated parameter count", exact, archs)};
}

// ---------------------------------------------------------------- end to end

constexpr double kEtaScale = 1000.0;  // desk-scale rescaling s of eta
const std::vector<double> kEtas{0.0, 0.003, 0.03};
const std::vector<std::uint64_t> kSweepSeeds{1, 2, 3, 4, 5};
const std::vector<std::uint64_t> kGainSeeds{1, 2, 3};
constexpr std::size_t kPretrainEpochs = 15, kAdaptEpochs = 5, kHyperFinetuneEpochs = 10;

DomainSpec source_domain() {
  DomainSpec d;
  d.name = "source";
  d.feat_dim = 8;
  d.vocab = 8;
  return d;
}

DomainSpec target_domain() {
  DomainSpec d = source_domain();
  d.name = "target";
  d.mean_frames = 12;
  d.min_tokens = 1;
  d.max_tokens = 2;
  d.tempo = 1.6;
  d.channel_shift = 0.4;
  d.channel_tilt = 0.6;
  d.channel_scale = 1.3;
  d.seed = 2;
  return d;
}

StageConfig stage(const std::string& name, StageKind kind, const std::string& from, std::size_t epochs = 0) {
  StageConfig s;
  s.name = name;
  s.kind = kind;
  s.from = from;
  s.epochs = epochs;
  s.corpus = kind == StageKind::Pretrain ? "source" : "target";
  s.lr_weights = 3e-3;
  return s;
}

// Both arms see kAdaptEpochs + kHyperFinetuneEpochs passes over the target.
Recipe two_arm_recipe() {
  Recipe r;
  r.model = oracle::reduced_config();
  StageConfig pre = stage("pretrain", StageKind::Pretrain, "", kPretrainEpochs);
  pre.lr_logits = 3e-3;
  StageConfig adapt = stage("adapt", StageKind::Adapt, "pretrain", kAdaptEpochs);
  adapt.lr_logits = 3e-2;
  adapt.eta_scale = kEtaScale;
  r.stages = {pre,
              adapt,
              stage("derive_hyper", StageKind::Derive, "adapt"),
              stage("hyper", StageKind::Finetune, "derive_hyper", kHyperFinetuneEpochs),
              stage("derive_param", StageKind::Derive, "pretrain"),
              stage("param_only", StageKind::Finetune, "derive_param", kAdaptEpochs + kHyperFinetuneEpochs)};
  return r;
}

struct EndToEnd {
  Corpus source, target;
  Recipe recipe;
  SweepResult sweep;
  fs::path out;
  double seconds = 0.0;

  const Report& arm(double eta) const {
    for (const auto& a : sweep.arms)
      if (a.eta == eta) {
        if (!a.report) throw std::runtime_error("sweep arm eta=" + std::to_string(eta) + " has no report");
        return *a.report;
      }
    throw std::runtime_error("no sweep arm");
  }
};

EndToEnd& end_to_end() {
  static EndToEnd* e = [] {
    auto* x = new EndToEnd;
    const auto t0 = Clock::now();
    x->source = generate(source_domain(), SplitCounts{600, 40, 40});
    x->target = generate(target_domain(), SplitCounts{200, 100, 1000});
    x->recipe = two_arm_recipe();
    x->out = fs::temp_directory_path() / ("hpadapt_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(x->out);
    const std::map<std::string, const Corpus*> corpora{{"source", &x->source}, {"target", &x->target}};
    x->sweep = run_sweep(x->recipe, kEtas, kSweepSeeds, corpora, x->target, x->out);
    x->seconds = seconds_since(t0);
    for (const auto& a : x->sweep.arms)
      for (const auto& err : a.errors) std::printf("sweep arm eta=%g error: %s\n", a.eta, err.c_str());
    std::printf("%s", x->sweep.table().c_str());
    return x;
  }();
  return *e;
}

double mean_frames(const Corpus& c) {
  double s = 0.0;
  for (const auto& u : c.utterances) s += static_cast<double>(u.frames);
  return s / static_cast<double>(c.utterances.size());
}

const SystemReport& row(const Report& r, const std::string& system, std::uint64_t seed) {
  for (const auto& s : r.systems)
    if (s.system == system && s.seed == seed) return s;
  throw std::runtime_error("no report row for " + system + " seed " + std::to_string(seed));
}

Verdict penalty_trend() {
  auto& e = end_to_end();
  std::vector<double> med;
  std::string detail;
  for (double eta : kEtas) {
    std::vector<double> pc;
    for (auto seed : kSweepSeeds) pc.push_back(static_cast<double>(row(e.arm(eta), "hyper", seed).param_count));
    med.push_back(median(pc));
    detail += fmt("%seta=%g*s -> %.0f", detail.empty() ? "" : ", ", eta, med.back());
  }
  bool nonincreasing = true;
  for (std::size_t i = 1; i < med.size(); ++i) nonincreasing = nonincreasing && med[i] <= med[i - 1];
  return {nonincreasing && e.seconds < 2 * 3600.0,
          fmt("median extracted params over %zu seeds (s=%g): %s", kSweepSeeds.size(), kEtaScale, detail.c_str())};
}

struct ArmPair {
  std::vector<double> hyper, param, d_short, d_long;
};

ArmPair gain_runs() {
  auto& e = end_to_end();
  ArmPair p;
  for (auto seed : kGainSeeds) {
    const auto& h = row(e.arm(0.0), "hyper", seed);
    const auto& b = row(e.arm(0.0), "param_only", seed);
    p.hyper.push_back(h.ter.overall.ter);
    p.param.push_back(b.ter.overall.ter);
    p.d_short.push_back(b.ter.shorter.ter - h.ter.shorter.ter);
    p.d_long.push_back(b.ter.longer.ter - h.ter.longer.ter);
  }
  return p;
}

Verdict adaptation_gain() {
  auto& e = end_to_end();
  const auto p = gain_runs();
  const double ratio = mean_frames(e.source) / mean_frames(e.target);
  const double mh = median(p.hyper), mp = median(p.param);
  return {mh <= mp && ratio >= 8.0 && ratio <= 12.5 && e.seconds < 3 * 3600.0,
          fmt("median target-test TER over seeds 1-3 at eta=0: hyper %.4f <= param-only %.4f "
              "(per seed %.4f/%.4f/%.4f vs %.4f/%.4f/%.4f); length ratio %.1f:1; %zu target epochs per arm",
              mh, mp, p.hyper[0], p.hyper[1], p.hyper[2], p.param[0], p.param[1], p.param[2], ratio,
              kAdaptEpochs + kHyperFinetuneEpochs)};
}

Verdict length_pattern() {
  const auto p = gain_runs();
  const double ms = median(p.d_short), ml = median(p.d_long);
  return {ms >= ml, fmt("median TER gain shorter half %.4f >= longer half %.4f (per seed %.4f/%.4f/%.4f vs %.4f/%.4f/%.4f)",
                        ms, ml, p.d_short[0], p.d_short[1], p.d_short[2], p.d_long[0], p.d_long[1], p.d_long[2])};
}

Verdict reproducibility() {
  auto& e = end_to_end();
  const SweepArm* arm0 = nullptr;
  for (const auto& a : e.sweep.arms)
    if (a.eta == 0.0) arm0 = &a;
  if (!arm0 || arm0->runs.empty()) return {false, "no eta=0 run to compare against"};
  const auto& first = arm0->runs.front();

  const std::map<std::string, const Corpus*> corpora{{"source", &e.source}, {"target", &e.target}};
  const auto again = run_recipe(with_seed(with_eta(e.recipe, 0.0), first.first), corpora);
  std::size_t same = 0;
  for (const auto& s : e.recipe.stages) same += bitwise_equal(again.at(s.name), first.second.at(s.name));

  std::size_t round_trips = 0, checked = 0;
  for (const auto& a : e.sweep.arms) {
    for (const auto& [seed, res] : a.runs) {
      const fs::path dir = e.out / seed_dir_name(seed) / eta_dir_name(a.eta);
      for (const auto& [name, ck] : res.checkpoints) {
        ++checked;
        const std::string bytes = serialize(ck);
        const Checkpoint back = deserialize(bytes);
        const Checkpoint disk = load_checkpoint(stage_checkpoint_path(dir, name));
        round_trips += serialize(back) == bytes && serialize(disk) == bytes;
      }
    }
  }
  fs::remove_all(e.out);
  const std::size_t n = e.recipe.stages.size();
  return {same == n && round_trips == checked && checked > 0,
          fmt("fresh re-run of seed %llu: %zu/%zu stage checkpoints bit-identical; %zu/%zu checkpoints round-trip "
              "bit-exactly (memory and disk)",
              static_cast<unsigned long long>(first.first), same, n, round_trips, checked)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, gradient_suite},   {2, gumbel_suite},    {3, ctc_oracle_suite},
      {4, equivalence_suite}, {5, param_count_suite}, {6, penalty_trend},
      {7, adaptation_gain},  {8, length_pattern},  {9, reproducibility}};
  for (const auto& [n, fn] : criteria) {
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& ex) {
      v = {false, std::string("threw: ") + ex.what()};
    }
    report(n, v, seconds_since(t0));
  }
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
