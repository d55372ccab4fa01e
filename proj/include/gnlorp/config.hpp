// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration with four sections: model, data, optimizer, run.
// Every key is optional; unknown keys and wrongly typed values are rejected
// with the dotted key path and the line it appears on.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gnlorp/data.hpp"
#include "gnlorp/errors.hpp"
#include "gnlorp/memory_model.hpp"
#include "gnlorp/projection_optimizer.hpp"
#include "gnlorp/trainer.hpp"

namespace gnlorp {

using Json = nlohmann::ordered_json;

inline std::string_view to_string(Precision p) { return p == Precision::F64 ? "F64" : "F32"; }

inline Precision parse_precision(std::string_view s) {
  if (s == "F64") return Precision::F64;
  if (s == "F32") return Precision::F32;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected F64 or F32)");
}

struct RunSection {
  RunConfig run;
  std::string out_dir = "out";
  Precision precision = Precision::F64;
};

struct Config {
  ModelConfig model;
  DataConfig data;
  OptimizerConfig optimizer;
  RunSection run;
};

namespace detail {

/// 1-based line of the first `"key"` after the first `"section"`, or 0.
inline std::size_t find_key_line(std::string_view text, std::string_view section, std::string_view key) {
  std::size_t from = 0;
  if (!section.empty()) {
    const std::size_t s = text.find("\"" + std::string(section) + "\"");
    if (s == std::string_view::npos) return 0;
    from = s;
  }
  const std::size_t k = text.find("\"" + std::string(key) + "\"", from);
  if (k == std::string_view::npos) return 0;
  return 1 + std::size_t(std::count(text.begin(), text.begin() + std::ptrdiff_t(k), '\n'));
}

class SectionReader {
 public:
  SectionReader(const Json& root, std::string_view text, std::string section)
      : text_(text), section_(std::move(section)) {
    if (!root.contains(section_)) return;
    node_ = &root.at(section_);
    if (!node_->is_object()) fail("", "must be an object");
  }

  /// Rejects keys outside `allowed`.
  void only(std::initializer_list<std::string_view> allowed) const {
    if (!node_) return;
    for (const auto& [k, v] : node_->items()) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) fail(k, "unknown key");
    }
  }

  template <typename T>
  void read(std::string_view key, T& out) const {
    if (!node_ || !node_->contains(key)) return;
    const Json& v = node_->at(std::string(key));
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v.get<T>();
    } else {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      out = v.get<T>();
    }
  }

  template <typename Parse, typename E>
  void read_enum(std::string_view key, E& out, Parse parse) const {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  const Json* node(std::string_view key) const {
    if (!node_ || !node_->contains(key)) return nullptr;
    return &node_->at(std::string(key));
  }

  [[noreturn]] void fail(std::string_view key, std::string_view why) const {
    std::string path = section_;
    if (!key.empty()) path += "." + std::string(key);
    const std::size_t line = find_key_line(text_, section_, key.empty() ? section_ : key);
    std::string msg = path + ": " + std::string(why);
    if (line > 0) msg += " (line " + std::to_string(line) + ")";
    throw ConfigError(msg);
  }

 private:
  std::string_view text_;
  std::string section_;
  const Json* node_ = nullptr;
};

inline std::size_t line_of_offset(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + std::size_t(std::count(text.begin(), text.begin() + std::ptrdiff_t(byte), '\n'));
}

}  // namespace detail

inline Config parse_config(std::string_view text) {
  Json root;
  try {
    root = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config is not valid JSON (line " + std::to_string(detail::line_of_offset(text, e.byte)) +
                      "): " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : root.items()) {
    if (k != "model" && k != "data" && k != "optimizer" && k != "run") {
      throw ConfigError(k + ": unknown section (line " + std::to_string(detail::find_key_line(text, "", k)) + ")");
    }
  }
  Config c;

  const detail::SectionReader model(root, text, "model");
  model.only({"layer_dims", "nonlinearity", "head", "adapter_rank", "seed"});
  if (const Json* dims = model.node("layer_dims")) {
    if (!dims->is_array()) model.fail("layer_dims", "expected a list of [in, out] pairs");
    c.model.layer_dims.clear();
    for (const auto& p : *dims) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned()) {
        model.fail("layer_dims", "expected a list of [in, out] pairs");
      }
      c.model.layer_dims.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
    }
  } else {
    c.model.layer_dims = {{0, 16}, {16, 0}};
  }
  model.read_enum("nonlinearity", c.model.nonlinearity, parse_nonlinearity);
  model.read_enum("head", c.model.head, parse_head);
  model.read("adapter_rank", c.model.adapter_rank);
  model.read("seed", c.model.seed);

  const detail::SectionReader data(root, text, "data");
  data.only({"kind", "n", "dims", "seed", "text_path", "noise", "classes"});
  data.read_enum("kind", c.data.kind, parse_dataset_kind);
  data.read("n", c.data.n);
  if (const Json* dims = data.node("dims")) {
    if (!dims->is_array()) data.fail("dims", "expected a list of non-negative integers");
    c.data.dims.clear();
    for (const auto& d : *dims) {
      if (!d.is_number_unsigned()) data.fail("dims", "expected a list of non-negative integers");
      c.data.dims.push_back(d.get<std::size_t>());
    }
  } else if (c.data.kind == DatasetKind::SyntheticClassification) {
    c.data.dims = {16};
  }
  data.read("seed", c.data.seed);
  data.read("text_path", c.data.text_path);
  data.read("noise", c.data.noise);
  data.read("classes", c.data.classes);

  const detail::SectionReader opt(root, text, "optimizer");
  opt.only({"method", "lr", "scale", "update_freq", "proj_rank", "mode", "quantize", "detach_norm",
            "reset_state_on_refresh", "seed", "beta1", "beta2", "eps"});
  opt.read_enum("method", c.optimizer.method, parse_method);
  opt.read("lr", c.optimizer.lr);
  opt.read("scale", c.optimizer.scale);
  opt.read("update_freq", c.optimizer.update_freq);
  opt.read("proj_rank", c.optimizer.proj_rank);
  opt.read_enum("mode", c.optimizer.mode, parse_projection_mode);
  opt.read("quantize", c.optimizer.quantize);
  opt.read("detach_norm", c.optimizer.detach_norm);
  opt.read("reset_state_on_refresh", c.optimizer.reset_state_on_refresh);
  opt.read("seed", c.optimizer.seed);
  opt.read("beta1", c.optimizer.adam.beta1);
  opt.read("beta2", c.optimizer.adam.beta2);
  opt.read("eps", c.optimizer.adam.eps);

  const detail::SectionReader run(root, text, "run");
  run.only({"steps", "record_every", "out_dir", "precision", "batch_size"});
  run.read("steps", c.run.run.steps);
  run.read("record_every", c.run.run.record_every);
  run.read("out_dir", c.run.out_dir);
  run.read_enum("precision", c.run.precision, parse_precision);
  run.read("batch_size", c.run.run.batch_size);

  validate(c.optimizer);
  validate(c.run.run);
  return c;
}

inline std::string read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Config load_config(const std::string& path) { return parse_config(read_config_file(path)); }

/// The fully resolved config, defaults included, in the input layout.
inline Json to_json(const Config& c) {
  Json j;
  Json dims = Json::array();
  for (const auto& d : c.model.layer_dims) dims.push_back({d.in, d.out});
  j["model"] = {{"layer_dims", dims},
                {"nonlinearity", to_string(c.model.nonlinearity)},
                {"head", to_string(c.model.head)},
                {"adapter_rank", c.model.adapter_rank},
                {"seed", c.model.seed}};
  j["data"] = {{"kind", to_string(c.data.kind)}, {"n", c.data.n},         {"dims", c.data.dims},
               {"seed", c.data.seed},            {"text_path", c.data.text_path},
               {"noise", c.data.noise},          {"classes", c.data.classes}};
  j["optimizer"] = {{"method", to_string(c.optimizer.method)},
                    {"lr", c.optimizer.lr},
                    {"scale", c.optimizer.scale},
                    {"update_freq", c.optimizer.update_freq},
                    {"proj_rank", c.optimizer.proj_rank},
                    {"mode", to_string(c.optimizer.mode)},
                    {"quantize", c.optimizer.quantize},
                    {"detach_norm", c.optimizer.detach_norm},
                    {"reset_state_on_refresh", c.optimizer.reset_state_on_refresh},
                    {"seed", c.optimizer.seed},
                    {"beta1", c.optimizer.adam.beta1},
                    {"beta2", c.optimizer.adam.beta2},
                    {"eps", c.optimizer.adam.eps}};
  j["run"] = {{"steps", c.run.run.steps},
              {"record_every", c.run.run.record_every},
              {"out_dir", c.run.out_dir},
              {"precision", to_string(c.run.precision)},
              {"batch_size", c.run.run.batch_size}};
  return j;
}

}  // namespace gnlorp
