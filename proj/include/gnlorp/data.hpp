// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// In-memory datasets. Examples live in the columns of `inputs`.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gnlorp/errors.hpp"
#include "gnlorp/linalg.hpp"

#ifndef GNLORP_DATA_DIR
#define GNLORP_DATA_DIR "data"
#endif

namespace gnlorp {

enum class DatasetKind { SyntheticRegression, SyntheticClassification, CharLM };

inline std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::SyntheticRegression: return "SyntheticRegression";
    case DatasetKind::SyntheticClassification: return "SyntheticClassification";
    case DatasetKind::CharLM: return "CharLM";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(std::string_view s) {
  for (auto k : {DatasetKind::SyntheticRegression, DatasetKind::SyntheticClassification, DatasetKind::CharLM})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown data kind '" + std::string(s) + "'");
}

inline std::string default_text_path() { return std::string(GNLORP_DATA_DIR) + "/corpus.txt"; }

struct DataConfig {
  DatasetKind kind = DatasetKind::SyntheticRegression;
  std::size_t n = 256;
  // Regression: {in, out}. Classification: {in} or {in, classes}. CharLM: unused.
  std::vector<std::size_t> dims{16, 8};
  std::uint64_t seed = 0;
  std::string text_path;  // empty selects the bundled corpus
  double noise = 0.01;
  std::size_t classes = 4;
};

struct Dataset {
  DatasetKind kind = DatasetKind::SyntheticRegression;
  Matrix inputs;                    // features x n
  Matrix targets;                   // outputs x n (regression only)
  std::vector<std::size_t> labels;  // class index per example (classification, CharLM)
  std::size_t classes = 0;
  std::string vocab;                // CharLM: character of each class index

  std::size_t size() const noexcept { return inputs.cols(); }
  std::size_t input_dim() const noexcept { return inputs.rows(); }
  std::size_t output_dim() const noexcept { return kind == DatasetKind::SyntheticRegression ? targets.rows() : classes; }
  bool is_classification() const noexcept { return kind != DatasetKind::SyntheticRegression; }
};

inline void validate(const Dataset& d) {
  if (d.kind == DatasetKind::SyntheticRegression) {
    if (d.targets.cols() != d.inputs.cols()) throw ShapeError("dataset: target and input counts differ");
    return;
  }
  if (d.labels.size() != d.inputs.cols()) throw ShapeError("dataset: label and input counts differ");
  for (std::size_t y : d.labels)
    if (y >= d.classes) throw RangeError("dataset: class index " + std::to_string(y) + " >= " + std::to_string(d.classes));
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open text file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Next-character pairs over the given text, one-hot encoded.
inline Dataset char_lm_dataset(const std::string& text, std::size_t n) {
  if (text.size() < 2) throw DegenerateInputError("CharLM text needs at least two characters");
  Dataset d;
  d.kind = DatasetKind::CharLM;
  std::string vocab = text;
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  d.vocab = vocab;
  d.classes = vocab.size();
  std::map<char, std::size_t> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index[vocab[i]] = i;
  const std::size_t pairs = std::min(n, text.size() - 1);
  d.inputs = Matrix(d.classes, pairs);
  d.labels.resize(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    d.inputs(index[text[i]], i) = 1.0;
    d.labels[i] = index[text[i + 1]];
  }
  return d;
}

inline Dataset gen_synthetic(const DataConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("data.n must be >= 1");
  Rng rng(cfg.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Dataset d;
  d.kind = cfg.kind;
  switch (cfg.kind) {
    case DatasetKind::SyntheticRegression: {
      if (cfg.dims.size() != 2 || cfg.dims[0] < 1 || cfg.dims[1] < 1) {
        throw ConfigError("data.dims must be [in, out] for SyntheticRegression");
      }
      const std::size_t in = cfg.dims[0], out = cfg.dims[1];
      const Matrix w_star = gaussian_matrix<double>(out, in, 1.0 / std::sqrt(double(in)), rng);
      d.inputs = gaussian_matrix<double>(in, cfg.n, 1.0, rng);
      d.targets = matmul(w_star, d.inputs);
      if (cfg.noise != 0.0) {
        for (auto& v : d.targets.data()) v += cfg.noise * n01(rng);
      }
      break;
    }
    case DatasetKind::SyntheticClassification: {
      if (cfg.dims.empty() || cfg.dims.size() > 2 || cfg.dims[0] < 1) {
        throw ConfigError("data.dims must be [in] or [in, classes] for SyntheticClassification");
      }
      const std::size_t in = cfg.dims[0];
      d.classes = cfg.dims.size() == 2 ? cfg.dims[1] : cfg.classes;
      if (d.classes < 2) throw ConfigError("classification needs at least 2 classes");
      // Cluster centres on the radius-4 sphere, per-axis noise std 0.5.
      Matrix centres = gaussian_matrix<double>(in, d.classes, 1.0, rng);
      const auto norms = column_norms(centres);
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t c = 0; c < d.classes; ++c) centres(i, c) *= 4.0 / norms[c];
      std::uniform_int_distribution<std::size_t> pick(0, d.classes - 1);
      d.inputs = Matrix(in, cfg.n);
      d.labels.resize(cfg.n);
      for (std::size_t j = 0; j < cfg.n; ++j) {
        const std::size_t y = pick(rng);
        d.labels[j] = y;
        for (std::size_t i = 0; i < in; ++i) d.inputs(i, j) = centres(i, y) + 0.5 * n01(rng);
      }
      break;
    }
    case DatasetKind::CharLM:
      d = char_lm_dataset(read_text_file(cfg.text_path.empty() ? default_text_path() : cfg.text_path), cfg.n);
      break;
  }
  validate(d);
  return d;
}

/// Columns `idx` of the dataset as a new dataset.
inline Dataset select_columns(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.kind = d.kind;
  out.classes = d.classes;
  out.vocab = d.vocab;
  out.inputs = Matrix(d.inputs.rows(), idx.size());
  if (d.kind == DatasetKind::SyntheticRegression) out.targets = Matrix(d.targets.rows(), idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    for (std::size_t i = 0; i < d.inputs.rows(); ++i) out.inputs(i, j) = d.inputs(i, idx[j]);
    if (d.kind == DatasetKind::SyntheticRegression)
      for (std::size_t i = 0; i < d.targets.rows(); ++i) out.targets(i, j) = d.targets(i, idx[j]);
    else
      out.labels.push_back(d.labels[idx[j]]);
  }
  return out;
}

}  // namespace gnlorp
