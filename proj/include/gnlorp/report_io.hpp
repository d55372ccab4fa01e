// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serialization of run reports, memory estimates and step logs. Nothing here
// writes wall-clock time, so files from identical configs compare equal byte
// for byte.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "gnlorp/config.hpp"
#include "gnlorp/errors.hpp"
#include "gnlorp/format.hpp"
#include "gnlorp/memory_model.hpp"
#include "gnlorp/trainer.hpp"

namespace gnlorp {

inline constexpr std::string_view kStepsCsvHeader =
    "step,loss,grad_norm_I,grad_norm_J,stable_rank_ZI,stable_rank_HJ,refresh,mem_bytes_est";

inline void write_step_row(std::ostream& out, const StepRecord& r) {
  out << r.step << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm_i) << ','
      << format_double(r.grad_norm_j) << ',' << format_double(r.stable_rank_zi) << ','
      << format_double(r.stable_rank_hj) << ',' << (r.refresh ? 1 : 0) << ',' << r.mem_bytes_est << '\n';
}

inline void write_steps_csv(std::ostream& out, const RunReport& rep) {
  out << kStepsCsvHeader << '\n';
  for (const auto& r : rep.records) write_step_row(out, r);
}

/// One table for several runs, with the method name as the first column.
inline void write_compare_csv(std::ostream& out, const std::vector<RunReport>& reps) {
  out << "method," << kStepsCsvHeader << '\n';
  for (const auto& rep : reps) {
    for (const auto& r : rep.records) {
      out << to_string(rep.method) << ',';
      write_step_row(out, r);
    }
  }
}

namespace detail {

/// NaN and infinities have no JSON spelling; they become null.
inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace detail

inline Json to_json(const MemoryEstimate& e) {
  return {{"method", to_string(e.method)},
          {"dtype", to_string(e.dtype)},
          {"quantize", e.quantize},
          {"elements",
           {{"params", e.counts.params},
            {"trainable", e.counts.trainable},
            {"grads", e.counts.grads},
            {"optimizer", e.counts.optimizer},
            {"projector", e.counts.projector}}},
          {"bytes",
           {{"params", e.param_bytes},
            {"grads", e.grad_bytes},
            {"optimizer", e.optimizer_bytes},
            {"projector", e.projector_bytes},
            {"activations", e.activation_bytes},
            {"total", e.total_bytes},
            {"weights_and_states", e.weights_and_states_bytes()}}}};
}

inline Json to_json(const Metrics& m) {
  return {{"loss", detail::number_or_null(m.loss)},
          {"accuracy", detail::number_or_null(m.accuracy)},
          {"perplexity", detail::number_or_null(m.perplexity)}};
}

inline Json to_json(const RunReport& r) {
  Json records = Json::array();
  for (const auto& s : r.records) {
    records.push_back({{"step", s.step},
                       {"loss", detail::number_or_null(s.loss)},
                       {"grad_norm_I", detail::number_or_null(s.grad_norm_i)},
                       {"grad_norm_J", detail::number_or_null(s.grad_norm_j)},
                       {"stable_rank_ZI", detail::number_or_null(s.stable_rank_zi)},
                       {"stable_rank_HJ", detail::number_or_null(s.stable_rank_hj)},
                       {"refresh", s.refresh},
                       {"mem_bytes_est", s.mem_bytes_est}});
  }
  return {{"method", to_string(r.method)},
          {"initial_loss", detail::number_or_null(r.initial_loss)},
          {"final", to_json(r.final_metrics)},
          {"loss_delta_std", detail::number_or_null(r.loss_delta_std)},
          {"parameter_count", r.parameter_count},
          {"refresh_steps", r.refresh_steps},
          {"refresh_count", r.refresh_steps.size()},
          {"max_orthonormality_error", r.max_orthonormality_error},
          {"state",
           {{"allocated_elements", r.optimizer_state_elements},
            {"estimated_elements", r.estimated_state_elements},
            {"allocated_bytes", r.optimizer_state_bytes},
            {"estimated_bytes", r.estimated_state_bytes},
            {"projector_elements", r.projector_elements},
            {"estimated_projector_elements", r.estimated_projector_elements},
            {"peak_cached_activations", r.peak_cached_activations},
            {"estimated_activation_bytes", r.estimated_activation_bytes}}},
          {"records", records}};
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.close();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace gnlorp
