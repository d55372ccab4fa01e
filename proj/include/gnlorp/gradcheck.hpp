// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference check of the normalized low-rank layer backward
// pass against the scalar loss ½‖forward(layer, x)‖².

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "gnlorp/layers.hpp"
#include "gnlorp/linalg.hpp"

namespace gnlorp {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  int trials = 0;
};

/// |a − n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is near zero from dominating through finite-difference round-off.
inline double gradcheck_relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double half_sq_output(const NormalizedLowRankLinear<double>& layer, const Matrix& x) {
  return 0.5 * frobenius_norm_sq(forward(layer, x));
}

/// Random layer with non-trivial adapters and magnitudes, so every gradient
/// block is exercised (a fresh init has J = 0 and therefore d_i = 0).
inline NormalizedLowRankLinear<double> random_layer_state(std::size_t k, std::size_t m,
                                                          std::size_t r, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.5, 2.0);
  NormalizedLowRankLinear<double> layer =
      init_layer(gaussian_matrix<double>(k, m, 1.0, rng), r, rng());
  for (auto& v : layer.mvec) v = pos(rng);
  for (auto& v : layer.j_adapter.data()) v = 0.5 * n01(rng);
  return layer;
}

/// Checks d_mvec, d_i, d_j and d_input coordinate by coordinate.
inline double gradcheck_layer(const NormalizedLowRankLinear<double>& layer, const Matrix& x,
                              double step = 1e-6) {
  const Matrix y = forward(layer, x);
  const LayerGradients<double> g = backward(layer, x, y);
  double worst = 0.0;

  auto probe = [&](double& slot, double analytic, auto&& loss) {
    const double saved = slot;
    slot = saved + step;
    const double up = loss();
    slot = saved - step;
    const double down = loss();
    slot = saved;
    worst = std::max(worst, gradcheck_relative_error(analytic, (up - down) / (2.0 * step)));
  };

  NormalizedLowRankLinear<double> l = layer;
  Matrix xx = x;
  auto loss = [&] { return half_sq_output(l, xx); };
  for (std::size_t j = 0; j < l.mvec.size(); ++j) probe(l.mvec[j], g.d_mvec[j], loss);
  for (std::size_t i = 0; i < l.i_adapter.size(); ++i)
    probe(l.i_adapter.data()[i], g.d_i.data()[i], loss);
  for (std::size_t i = 0; i < l.j_adapter.size(); ++i)
    probe(l.j_adapter.data()[i], g.d_j.data()[i], loss);
  for (std::size_t i = 0; i < xx.size(); ++i) probe(xx.data()[i], g.d_input.data()[i], loss);
  return worst;
}

/// Random configurations with k, m ∈ [2, 10], r ∈ [1, min(4, k, m)].
inline GradcheckResult run_gradcheck(int trials, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> dim(2, 10);
  std::uniform_int_distribution<std::size_t> batch(1, 4);
  GradcheckResult res;
  for (int t = 0; t < trials; ++t) {
    const std::size_t k = dim(rng);
    const std::size_t m = dim(rng);
    const std::size_t rmax = std::min<std::size_t>({4, k, m});
    const std::size_t r = std::uniform_int_distribution<std::size_t>(1, rmax)(rng);
    const auto layer = random_layer_state(k, m, r, rng);
    const Matrix x = gaussian_matrix<double>(m, batch(rng), 1.0, rng);
    res.max_rel_error = std::max(res.max_rel_error, gradcheck_layer(layer, x));
    res.coordinates += layer.trainable_count() + x.size();
    ++res.trials;
  }
  return res;
}

}  // namespace gnlorp
