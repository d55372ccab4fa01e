// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand dispatch for the `gnlorp` tool. Key metrics go to stdout as
// `RESULT key=value` lines; diagnostics go to stderr.
//
// Exit codes: 0 ok, 1 other failure (including a failed gradcheck), 2 bad
// config or arguments, 3 divergence, 4 I/O.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gnlorp/config.hpp"
#include "gnlorp/dynamics_lab.hpp"
#include "gnlorp/errors.hpp"
#include "gnlorp/format.hpp"
#include "gnlorp/gradcheck.hpp"
#include "gnlorp/memory_model.hpp"
#include "gnlorp/report_io.hpp"
#include "gnlorp/trainer.hpp"

namespace gnlorp {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitDivergence = 3, kExitIo = 4 };

inline constexpr double kGradcheckTolerance = 1e-5;

/// Parallelism cap from GNLORP_THREADS; 1 when unset or unparsable.
inline std::size_t thread_cap() {
  const char* v = std::getenv("GNLORP_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end && *end == '\0' && n >= 1) ? std::size_t(n) : 1;
}

/// Architecture file: either {"preset": "roberta_base_like" | "llama7b_like"}
/// or {"layers": [[k, m], ...]}, plus optional adapter_rank, proj_rank, mode,
/// extra_params and extra_trainable.
inline ArchSpec parse_arch(std::string_view text) {
  Json root;
  try {
    root = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("arch is not valid JSON (line " + std::to_string(detail::line_of_offset(text, e.byte)) +
                      "): " + e.what());
  }
  if (!root.is_object()) throw ConfigError("arch must be a JSON object");
  Json wrapped = {{"arch", root}};
  const detail::SectionReader r(wrapped, text, "arch");
  r.only({"preset", "layers", "adapter_rank", "proj_rank", "mode", "extra_params", "extra_trainable"});
  std::string preset;
  r.read("preset", preset);
  std::size_t rank = 0;
  r.read("adapter_rank", rank);
  ArchSpec a;
  if (!preset.empty()) {
    if (r.node("layers")) r.fail("layers", "cannot be combined with preset");
    if (preset == "roberta_base_like") a = roberta_base_like(rank ? rank : 8);
    else if (preset == "llama7b_like") a = llama7b_like(rank ? rank : 1024);
    else r.fail("preset", "unknown preset '" + preset + "'");
  } else {
    const Json* layers = r.node("layers");
    if (!layers || !layers->is_array()) r.fail("layers", "expected a list of [out, in] pairs");
    for (const auto& p : *layers) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned()) {
        r.fail("layers", "expected a list of [out, in] pairs");
      }
      a.layers.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
    }
    if (rank) a.adapter_rank = rank;
  }
  r.read("proj_rank", a.proj_rank);
  r.read_enum("mode", a.mode, parse_projection_mode);
  r.read("extra_params", a.extra_params);
  r.read("extra_trainable", a.extra_trainable);
  validate(a);
  return a;
}

namespace detail {

inline void result(std::ostream& out, std::string_view key, const std::string& value) {
  out << "RESULT " << key << '=' << value << '\n';
}
inline void result(std::ostream& out, std::string_view key, double v) { result(out, key, format_double(v)); }

/// Training on prepared data at the configured precision.
inline RunReport run_training(const Config& cfg, const Dataset& data) {
  if (cfg.run.precision == Precision::F32) return train<float>(cfg.model, data, cfg.optimizer, cfg.run.run).report;
  return train<double>(cfg.model, data, cfg.optimizer, cfg.run.run).report;
}

inline ModelConfig resolved_model(const Config& cfg, const Dataset& data) { return resolve_dims(cfg.model, data); }

inline int cmd_train(const std::string& config_path, const std::string& out_override, std::ostream& out) {
  Config cfg = load_config(config_path);
  if (!out_override.empty()) cfg.run.out_dir = out_override;
  const Dataset data = gen_synthetic(cfg.data);
  cfg.model = resolved_model(cfg, data);
  const RunReport rep = run_training(cfg, data);
  const auto est = estimate_memory(arch_of(cfg.model, cfg.optimizer), cfg.optimizer.method,
                                   cfg.run.precision == Precision::F32 ? Dtype::F32 : Dtype::F64, cfg.optimizer.quantize);

  const std::filesystem::path dir(cfg.run.out_dir);
  ensure_directory(dir);
  Json j;
  j["config"] = to_json(cfg);
  j["report"] = to_json(rep);
  j["memory"] = to_json(with_activations(est, rep.estimated_activation_bytes));
  write_text_file(dir / "report.json", dump_json(j));
  std::ostringstream csv;
  write_steps_csv(csv, rep);
  write_text_file(dir / "steps.csv", csv.str());

  result(out, "method", std::string(to_string(rep.method)));
  result(out, "initial_loss", rep.initial_loss);
  result(out, "final_loss", rep.final_metrics.loss);
  if (std::isfinite(rep.final_metrics.accuracy)) result(out, "accuracy", rep.final_metrics.accuracy);
  if (std::isfinite(rep.final_metrics.perplexity)) result(out, "perplexity", rep.final_metrics.perplexity);
  result(out, "refresh_count", std::to_string(rep.refresh_steps.size()));
  result(out, "optimizer_state_bytes", std::to_string(rep.optimizer_state_bytes));
  result(out, "wall_seconds", rep.wall_seconds);
  result(out, "report", (dir / "report.json").string());
  return kExitOk;
}

inline int cmd_compare(const std::string& config_path, const std::string& out_override, std::size_t threads,
                       std::ostream& out) {
  Config cfg = load_config(config_path);
  if (!out_override.empty()) cfg.run.out_dir = out_override;
  const Dataset data = gen_synthetic(cfg.data);
  cfg.model = resolved_model(cfg, data);

  std::vector<Method> methods(std::begin(kAllMethods), std::end(kAllMethods));
  std::sort(methods.begin(), methods.end(), [](Method a, Method b) { return to_string(a) < to_string(b); });
  std::vector<RunReport> reports(methods.size());
  std::vector<std::exception_ptr> errors(methods.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < methods.size(); i = next++) {
      try {
        Config c = cfg;
        c.optimizer.method = methods[i];
        reports[i] = run_training(c, data);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, methods.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const std::filesystem::path dir(cfg.run.out_dir);
  ensure_directory(dir);
  std::ostringstream csv;
  write_compare_csv(csv, reports);
  write_text_file(dir / "compare.csv", csv.str());
  Json runs = Json::array();
  for (const auto& r : reports) runs.push_back(to_json(r));
  Json j;
  j["config"] = to_json(cfg);
  j["runs"] = runs;
  write_text_file(dir / "compare.json", dump_json(j));
  for (const auto& r : reports) result(out, std::string("final_loss.") + std::string(to_string(r.method)), r.final_metrics.loss);
  result(out, "csv", (dir / "compare.csv").string());
  return kExitOk;
}

struct DynamicsArgs {
  std::size_t k = 4;
  std::size_t m = 4;
  std::vector<double> spectrum_b;
  std::vector<double> spectrum_c;
  double alpha = 0.1;
  std::int64_t steps = 2000;
  std::int64_t record_every = 1;
  std::uint64_t seed = 0;
  std::string out = "trajectory.csv";
};

inline int cmd_dynamics(DynamicsArgs a, std::ostream& out) {
  if (a.k < 1 || a.m < 1) throw ConfigError("--k and --m must be >= 1");
  if (a.steps < 0) throw ConfigError("--steps must be >= 0");
  if (a.record_every < 1) throw ConfigError("--record-every must be >= 1");
  if (a.spectrum_b.empty())
    for (std::size_t i = 0; i < a.k; ++i) a.spectrum_b.push_back(double(i + 1));
  if (a.spectrum_c.empty()) a.spectrum_c.assign(a.m, 1.0);
  DynamicsSystem sys;
  try {
    sys = make_system(a.k, a.m, a.spectrum_b, a.spectrum_c, a.seed, a.alpha);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  const RankTrajectory tr = run_lemma1(sys, a.steps, a.record_every);
  std::ostringstream csv;
  write_trajectory_csv(csv, tr);
  write_text_file(a.out, csv.str());
  result(out, "final_stable_rank", tr.stable_ranks.back());
  result(out, "first_step_below_1.001", std::to_string(first_step_below(tr, 1.001)));
  result(out, "csv", a.out);
  return kExitOk;
}

inline int cmd_memory(const std::string& arch_path, const std::string& method, const std::string& dtype,
                      bool quantize, std::size_t batch, const std::string& out_path, std::ostream& out) {
  const ArchSpec arch = parse_arch(read_config_file(arch_path));
  const Method m = parse_method(method);
  const Dtype d = parse_dtype(dtype);
  MemoryEstimate e = estimate_memory(arch, m, d, quantize);
  if (batch > 0) e = with_activations(e, activation_estimate(arch, batch, arch.layers.size(), d));
  const Json j = to_json(e);
  if (!out_path.empty()) write_text_file(out_path, dump_json(j));
  result(out, "method", std::string(to_string(m)));
  result(out, "dtype", std::string(to_string(d)));
  result(out, "optimizer_bytes", std::to_string(e.optimizer_bytes));
  result(out, "weights_and_states_bytes", std::to_string(e.weights_and_states_bytes()));
  result(out, "total_bytes", std::to_string(e.total_bytes));
  if (m != Method::FullAdam) {
    const auto full = estimate_memory(arch, Method::FullAdam, Dtype::BF16, false);
    result(out, "optimizer_reduction_vs_bf16_full", optimizer_reduction(e, full));
  }
  if (out_path.empty()) out << dump_json(j);
  return kExitOk;
}

inline int cmd_gradcheck(std::size_t trials, std::uint64_t seed, std::ostream& out) {
  if (trials < 1) throw ConfigError("--trials must be >= 1");
  const auto r = run_gradcheck(trials, seed);
  result(out, "max_rel_error", r.max_rel_error);
  result(out, "trials", std::to_string(r.trials));
  result(out, "coordinates", std::to_string(r.coordinates));
  const bool ok = r.max_rel_error <= kGradcheckTolerance;
  result(out, "pass", std::string(ok ? "1" : "0"));
  return ok ? kExitOk : kExitFailure;
}

}  // namespace detail

/// Runs one subcommand. Never throws; failures map to exit codes.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gnlorp: normalized low-rank adapters with projected Adam states", "gnlorp"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* train = app.add_subcommand("train", "Train one model; writes report.json and steps.csv");
  train->add_option("config", config_path, "JSON run config")->required();
  train->add_option("--out-dir", out_dir, "Overrides run.out_dir");

  std::size_t threads = thread_cap();
  auto* compare = app.add_subcommand("compare", "Train every method on the same data; writes compare.csv");
  compare->add_option("config", config_path, "JSON run config")->required();
  compare->add_option("--out-dir", out_dir, "Overrides run.out_dir");
  compare->add_option("--threads", threads, "Parallel runs (default GNLORP_THREADS or 1)")->check(CLI::PositiveNumber);

  detail::DynamicsArgs dyn;
  auto* sim = app.add_subcommand("simulate-dynamics", "Iterate the reversible gradient flow; writes a trajectory CSV");
  sim->add_option("--k", dyn.k, "Rows")->capture_default_str();
  sim->add_option("--m", dyn.m, "Columns")->capture_default_str();
  sim->add_option("--spectrum-b", dyn.spectrum_b, "Eigenvalues of B, comma separated (default 1..k)")->delimiter(',');
  sim->add_option("--spectrum-c", dyn.spectrum_c, "Eigenvalues of C, comma separated (default all ones)")->delimiter(',');
  sim->add_option("--alpha", dyn.alpha, "Step size")->capture_default_str();
  sim->add_option("--steps", dyn.steps, "Iterations")->capture_default_str();
  sim->add_option("--record-every", dyn.record_every, "Recording interval")->capture_default_str();
  sim->add_option("--seed", dyn.seed, "Seed")->capture_default_str();
  sim->add_option("--out", dyn.out, "CSV path")->capture_default_str();

  std::string arch_path, method = "GradNormLoRP", dtype = "BF16", mem_out;
  bool quantize = false;
  std::size_t batch = 0;
  auto* mem = app.add_subcommand("estimate-memory", "Byte accounting for an architecture file");
  mem->add_option("arch", arch_path, "JSON architecture")->required();
  mem->add_option("--method", method, "Optimizer method")->capture_default_str();
  mem->add_option("--dtype", dtype, "BF16, F32 or F64")->capture_default_str();
  mem->add_flag("--quantize", quantize, "8-bit optimizer states");
  mem->add_option("--batch", batch, "Include cached activations for this batch size");
  mem->add_option("--out", mem_out, "Write the JSON estimate here instead of stdout");

  std::size_t trials = 20;
  std::uint64_t seed = 7;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the normalized layer backward pass");
  grad->add_option("--trials", trials, "Random layer configs")->capture_default_str();
  grad->add_option("--seed", seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    out << o.str();
    err << eo.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return detail::cmd_train(config_path, out_dir, out);
    if (*compare) return detail::cmd_compare(config_path, out_dir, threads, out);
    if (*sim) return detail::cmd_dynamics(dyn, out);
    if (*mem) return detail::cmd_memory(arch_path, method, dtype, quantize, batch, mem_out, out);
    if (*grad) return detail::cmd_gradcheck(trials, seed, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged at step " << e.step() << ": " << e.what() << '\n';
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace gnlorp
