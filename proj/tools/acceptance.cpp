// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
// `gnlorp_acceptance 3 7` runs only criteria 3 and 7.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gnlorp/cli.hpp"
#include "gnlorp/dynamics_lab.hpp"
#include "gnlorp/gradcheck.hpp"
#include "gnlorp/memory_model.hpp"
#include "gnlorp/quant8.hpp"
#include "gnlorp/trainer.hpp"

using namespace gnlorp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;  // 0 means no limit
  std::function<Outcome()> run;
};

std::string fmt(double v) { return format_double(v); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome gradient_correctness() {
  const auto r = run_gradcheck(20, 7);
  return {r.max_rel_error <= 1e-5, "max_rel_error=" + fmt(r.max_rel_error) + " over " + std::to_string(r.trials) +
                                       " configs (tol 1e-5)"};
}

Outcome rank_collapse() {
  int collapsed = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto sys = make_system(4, 4, {1.0, 2.0, 3.0, 4.0}, {1.0, 1.0, 1.0, 1.0}, seed, 0.1);
    if (first_step_below(run_lemma1(sys, 2000, 1), 1.001) >= 0) ++collapsed;
  }
  const double predicted = 2.0 * std::log((1.0 - 0.1 * 2.0) / (1.0 - 0.1 * 1.0));
  int slope_ok = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto sys = make_system(2, 3, {1.0, 2.0}, {1.0, 1.0, 1.0}, 300 + seed, 0.1);
    const double slope = fit_log_excess_slope(run_lemma1(sys, 300, 1), 5);
    const double rel = std::abs(slope - predicted) / std::abs(predicted);
    worst = std::max(worst, rel);
    if (rel <= 0.15) ++slope_ok;
  }
  return {collapsed >= 18 && slope_ok >= 18,
          std::to_string(collapsed) + "/20 seeds reach 1.001; slope within 15% in " + std::to_string(slope_ok) +
              "/20 (worst rel err " + fmt(worst) + ", predicted " + fmt(predicted) + ")"};
}

Outcome paired_collapse() {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto z = make_system(6, 4, {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, {1.0, 1.5, 2.0, 2.5}, 400 + seed, 0.1);
    auto h = make_system(4, 6, {1.0, 2.0, 3.0, 4.0}, {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, 500 + seed, 0.08);
    const auto r = run_theorem1(z, h, 2000, 10);
    if (r.z.stable_ranks.back() <= 1.001 && r.h.stable_ranks.back() <= 1.001) ++ok;
  }
  return {ok >= 18, std::to_string(ok) + "/20 seeds collapse both flows to <= 1.001"};
}

Outcome full_rank_equivalence() {
  DataConfig dc;
  dc.dims = {8, 5};
  dc.n = 64;
  dc.seed = 4;
  const Dataset data = gen_synthetic(dc);
  ModelConfig mc;
  mc.layer_dims = {{8, 6}, {6, 5}};
  mc.adapter_rank = 4;
  mc.seed = 2;
  OptimizerConfig oc;
  oc.scale = 1.0;
  oc.update_freq = 1;
  oc.proj_rank = 8;  // clamps to each projected axis
  RunConfig rc;
  rc.steps = 200;
  oc.method = Method::DoraAdam;
  const auto ref = train<double>(mc, data, oc, rc);
  oc.method = Method::GradNormLoRP;
  const auto gnl = train<double>(mc, data, oc, rc);
  double loss_diff = 0.0;
  for (std::size_t i = 0; i < ref.report.records.size(); ++i)
    loss_diff = std::max(loss_diff, std::abs(ref.report.records[i].loss - gnl.report.records[i].loss));
  double param_diff = 0.0;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& a = std::get<NormalizedLowRankLinear<double>>(ref.model.layers[l]);
    const auto& b = std::get<NormalizedLowRankLinear<double>>(gnl.model.layers[l]);
    param_diff = std::max({param_diff, max_abs_diff(a.i_adapter, b.i_adapter), max_abs_diff(a.j_adapter, b.j_adapter)});
    for (std::size_t i = 0; i < a.mvec.size(); ++i) param_diff = std::max(param_diff, std::abs(a.mvec[i] - b.mvec[i]));
  }
  return {loss_diff <= 1e-8 && param_diff <= 1e-8,
          "200 steps F64: max loss diff " + fmt(loss_diff) + ", max param diff " + fmt(param_diff) + " (tol 1e-8)"};
}

Outcome merge_equivalence() {
  DataConfig dc;
  dc.dims = {10, 6};
  dc.n = 128;
  const Dataset data = gen_synthetic(dc);
  ModelConfig mc;
  mc.layer_dims = {{10, 8}, {8, 6}};
  mc.adapter_rank = 3;
  OptimizerConfig oc;
  RunConfig rc;
  rc.steps = 500;
  rc.record_every = 50;
  Rng rng(99);
  const Matrix x = gaussian_matrix<double>(10, 100, 1.0, rng);
  double worst = 0.0;
  for (Method m : {Method::GradNormLoRP, Method::DoraAdam, Method::LoraAdam}) {
    oc.method = m;
    const auto res = train<double>(mc, data, oc, rc);
    worst = std::max(worst, max_abs_diff(predict(merged_model(res.model), x), predict(res.model, x)));
  }
  return {worst <= 1e-10, "max |merged - adapter| = " + fmt(worst) + " on 100 inputs after 500 steps (tol 1e-10)"};
}

Outcome projector_hygiene() {
  DataConfig dc;
  dc.dims = {12, 6};
  dc.n = 64;
  const Dataset data = gen_synthetic(dc);
  ModelConfig mc;
  mc.layer_dims = {{12, 10}, {10, 6}};
  mc.adapter_rank = 4;
  OptimizerConfig oc;  // update_freq 250
  RunConfig rc;
  rc.steps = 1000;
  rc.record_every = 50;
  auto model = build_model<double>(resolve_dims(mc, data));
  const auto rep = train_model(model, data, oc, rc);
  const bool steps_ok = rep.refresh_steps == std::vector<std::int64_t>{0, 250, 500, 750};
  return {steps_ok && rep.max_orthonormality_error <= 1e-8,
          std::to_string(rep.refresh_steps.size()) + " refreshes in 1000 steps (want 4 at t=0,250,500,750); max |B^T B - I| = " +
              fmt(rep.max_orthonormality_error) + " (tol 1e-8)"};
}

Outcome memory_ordering() {
  const ArchSpec arch = roberta_base_like(8);
  const Method order[] = {Method::GradNormLoRP, Method::GaloreAdam, Method::LoraAdam, Method::DoraAdam, Method::FullAdam};
  std::string detail, literal;
  bool ok = true;
  std::size_t prev = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto e = estimate_memory(arch, order[i], Dtype::BF16, false);
    const std::size_t b = e.weights_and_states_bytes();
    if (i > 0) ok = ok && prev < b;
    prev = b;
    detail += (i ? " < " : "") + std::string(to_string(order[i])) + " " + fmt(double(b) / 1e6) + "M";
    literal += (i ? ", " : "") + std::string(to_string(order[i])) + " " +
               fmt(double(e.counts.trainable * 2 + e.optimizer_bytes) / 1e6) + "M";
  }
  std::cout << "INFO  [7] trainable-only bytes + states (BF16): " << literal << '\n';
  return {ok, "weights + states, BF16: " + detail};
}

Outcome reduction_7b() {
  const ArchSpec arch = llama7b_like(1024);
  const auto full = estimate_memory(arch, Method::FullAdam, Dtype::BF16, false);
  const auto ours = estimate_memory(arch, Method::GradNormLoRP, Dtype::BF16, true);
  const auto ours_bf16 = estimate_memory(arch, Method::GradNormLoRP, Dtype::BF16, false);
  const double red = optimizer_reduction(ours, full);
  return {red >= 0.75 && red <= 0.95, "8-bit states reduce optimizer bytes by " + fmt(red) +
                                          " vs BF16 full Adam (band [0.75, 0.95]); BF16 states alone: " +
                                          fmt(optimizer_reduction(ours_bf16, full))};
}

Outcome quant_bound() {
  Rng rng(2026);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> mag(-6.0, 6.0);
  const std::size_t n = 1000000;
  std::vector<double> x(n);
  for (auto& v : x) v = n01(rng) * std::pow(10.0, mag(rng));
  Quant8Tensor q(n);
  q.store(std::span<const double>(x));
  std::vector<double> y(n);
  q.load(std::span<double>(y));
  std::size_t violations = 0;
  double worst_ratio = 0.0;
  for (std::size_t b = 0; b < q.blocks().size(); ++b) {
    const double bound = double(q.blocks()[b].absmax) / 127.0;
    for (std::size_t i = b * kQuantBlock; i < std::min(n, (b + 1) * kQuantBlock); ++i) {
      const double err = std::abs(y[i] - x[i]);
      if (err > bound) ++violations;
      if (bound > 0) worst_ratio = std::max(worst_ratio, err / bound);
    }
  }
  return {violations == 0, std::to_string(n) + " values, " + std::to_string(violations) +
                               " above absmax/127; worst err/(absmax/127) = " + fmt(worst_ratio)};
}

Outcome convergence() {
  DataConfig dc;
  dc.dims = {16, 8};
  dc.n = 256;
  const Dataset data = gen_synthetic(dc);
  ModelConfig mc;
  mc.layer_dims = {{16, 16}, {16, 8}};
  mc.adapter_rank = 8;
  mc.nonlinearity = Nonlinearity::Identity;
  RunConfig rc;
  rc.steps = 2000;
  rc.record_every = 100;
  OptimizerConfig oc;
  oc.method = Method::FullAdam;
  const double full = train<double>(mc, data, oc, rc).report.final_metrics.loss;
  oc.method = Method::GradNormLoRP;
  const double gnl = train<double>(mc, data, oc, rc).report.final_metrics.loss;
  oc.quantize = true;
  const double q8 = train<double>(mc, data, oc, rc).report.final_metrics.loss;

  DataConfig lm;
  lm.kind = DatasetKind::CharLM;
  lm.n = 1000;
  const Dataset text = gen_synthetic(lm);
  ModelConfig lmc;
  lmc.layer_dims = {{0, 16}, {16, 0}};
  lmc.adapter_rank = 8;
  lmc.head = Head::Softmax;
  OptimizerConfig lo;
  lo.lr = 0.05;
  RunConfig lr;
  lr.steps = 300;
  lr.record_every = 50;
  const double ppl = train<double>(lmc, text, lo, lr).report.final_metrics.perplexity;
  const double v = double(text.classes);

  const bool ok = gnl <= 1.1 * full && q8 <= 2.0 * full && ppl <= 0.8 * v;
  return {ok, "regression final loss: full " + fmt(full) + ", GNL " + fmt(gnl) + " (x" + fmt(gnl / full) +
                  ", max 1.1), 8-bit " + fmt(q8) + " (x" + fmt(q8 / full) + ", max 2.0); CharLM perplexity " +
                  fmt(ppl) + " vs uniform " + fmt(v) + " (max " + fmt(0.8 * v) + ")"};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "gnlorp_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "run.json") << R"({
  "model": {"layer_dims": [[0, 6], [6, 0]], "adapter_rank": 2},
  "data": {"n": 48, "dims": [8, 4], "seed": 5},
  "optimizer": {"update_freq": 20, "quantize": true},
  "run": {"steps": 60, "record_every": 3, "batch_size": 16}
})";
    std::ofstream(root / "arch.json") << R"({"preset": "roberta_base_like"})";
  }
  const std::string cfg = (root / "run.json").string();
  const std::string arch = (root / "arch.json").string();
  const std::string out = (root / "out").string();
  struct Case {
    std::string name;
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  const std::vector<Case> cases{
      {"train", {"train", cfg, "--out-dir", out}, {"report.json", "steps.csv"}},
      {"compare", {"compare", cfg, "--out-dir", out, "--threads", "2"}, {"compare.csv", "compare.json"}},
      {"simulate-dynamics", {"simulate-dynamics", "--steps", "300", "--seed", "4", "--out", out + "/traj.csv"}, {"traj.csv"}},
      {"estimate-memory", {"estimate-memory", arch, "--method", "GaloreAdam", "--out", out + "/mem.json"}, {"mem.json"}},
      {"gradcheck", {"gradcheck", "--trials", "5", "--seed", "3"}, {}},
  };
  auto invoke = [&](const Case& c, std::vector<std::string>& captured) {
    fs::remove_all(out);
    fs::create_directories(out);
    std::vector<std::string> args{"gnlorp"};
    args.insert(args.end(), c.args.begin(), c.args.end());
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = dispatch(int(argv.size()), argv.data(), o, e);
    // stdout minus the wall-clock line, plus every output file.
    std::istringstream lines(o.str());
    std::string line, kept;
    while (std::getline(lines, line))
      if (line.rfind("RESULT wall_seconds=", 0) != 0) kept += line + "\n";
    captured.push_back(kept);
    for (const auto& f : c.files) captured.push_back(slurp(fs::path(out) / f));
    return code;
  };
  std::string bad;
  for (const auto& c : cases) {
    std::vector<std::string> a, b;
    const int ca = invoke(c, a), cb = invoke(c, b);
    if (ca != 0 || cb != 0 || a != b) bad += (bad.empty() ? "" : ", ") + c.name;
  }
  fs::remove_all(root);
  return {bad.empty(), bad.empty() ? "train, compare, simulate-dynamics, estimate-memory, gradcheck: identical outputs"
                                   : "differs or failed: " + bad};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "Gradient correctness", 10.0, gradient_correctness},
      {2, "Rank collapse of the linear flow", 30.0, rank_collapse},
      {3, "Paired collapse of both adapter flows", 60.0, paired_collapse},
      {4, "Full-rank equivalence", 0.0, full_rank_equivalence},
      {5, "Merge equivalence", 0.0, merge_equivalence},
      {6, "Projector hygiene", 0.0, projector_hygiene},
      {7, "Memory ordering", 0.0, memory_ordering},
      {8, "7B-shape optimizer reduction", 0.0, reduction_7b},
      {9, "Quantization bound", 0.0, quant_bound},
      {10, "Desk-scale convergence", 0.0, convergence},
      {11, "Determinism", 0.0, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt(std::round(secs * 100.0) / 100.0) + "s";
    if (c.time_limit_s > 0) {
      timing += " (limit " + fmt(c.time_limit_s) + "s)";
      if (secs >= c.time_limit_s) o.pass = false;
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << "; " << timing
              << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << "(" << failed << " failing)" << std::endl;
  return failed ? 1 : 0;
}
