// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Linear layers without bias. The batch lives in the columns of the input, and
// every backward pass sums over the batch; loss scaling belongs to the caller.
//
// NormalizedLowRankLinear computes
//
//     W = M ⊙ (W0 + I·J) / ‖W0 + I·J‖_c
//
// column by column: column j of the effective weight is mvec[j] · v_j / ‖v_j‖
// with V = W0 + I·J. W0 is frozen, mvec, I and J are trainable.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gnlorp/errors.hpp"
#include "gnlorp/linalg.hpp"

namespace gnlorp {

template <std::floating_point T>
struct NormalizedLowRankLinear {
  BasicMatrix<T> w0;         // k x m, frozen
  std::vector<T> mvec;       // m
  BasicMatrix<T> i_adapter;  // k x r
  BasicMatrix<T> j_adapter;  // r x m
  std::size_t rank = 0;
  // Treat ‖v_j‖ as a constant in backward (the DoRA-style approximation).
  bool detach_norm = false;

  std::size_t out_dim() const noexcept { return w0.rows(); }
  std::size_t in_dim() const noexcept { return w0.cols(); }
  std::size_t trainable_count() const noexcept {
    return mvec.size() + i_adapter.size() + j_adapter.size();
  }
};

template <std::floating_point T>
struct LayerGradients {
  std::vector<T> d_mvec;
  BasicMatrix<T> d_i;
  BasicMatrix<T> d_j;
  BasicMatrix<T> d_input;
};

namespace detail {

template <typename T>
void require_no_zero_column(const std::vector<T>& norms, const char* what) {
  for (std::size_t j = 0; j < norms.size(); ++j) {
    if (!(norms[j] > T{0})) {
      throw DegenerateInputError(std::string(what) + ": column " + std::to_string(j) +
                                 " is zero");
    }
  }
}

}  // namespace detail

template <std::floating_point T>
NormalizedLowRankLinear<T> init_layer(const BasicMatrix<T>& w0, std::size_t r,
                                      std::uint64_t seed, bool detach_norm = false) {
  const std::size_t lim = std::min(w0.rows(), w0.cols());
  if (r < 1 || r > lim) {
    throw RangeError("init_layer: adapter rank " + std::to_string(r) + " outside [1, " +
                     std::to_string(lim) + "]");
  }
  auto norms = column_norms(w0);
  detail::require_no_zero_column(norms, "init_layer");
  Rng rng(seed);
  NormalizedLowRankLinear<T> layer;
  layer.w0 = w0;
  layer.mvec = std::move(norms);
  layer.i_adapter = gaussian_matrix<T>(w0.rows(), r, T{1} / std::sqrt(static_cast<T>(r)), rng);
  layer.j_adapter = BasicMatrix<T>::zeros(r, w0.cols());
  layer.rank = r;
  layer.detach_norm = detach_norm;
  return layer;
}

/// V = W0 + I·J.
template <std::floating_point T>
BasicMatrix<T> direction_matrix(const NormalizedLowRankLinear<T>& layer) {
  return layer.w0 + matmul(layer.i_adapter, layer.j_adapter);
}

template <std::floating_point T>
BasicMatrix<T> effective_weight(const NormalizedLowRankLinear<T>& layer) {
  BasicMatrix<T> v = direction_matrix(layer);
  const auto norms = column_norms(v);
  detail::require_no_zero_column(norms, "effective_weight");
  if (layer.mvec.size() != v.cols()) throw ShapeError("effective_weight: mvec length");
  for (std::size_t i = 0; i < v.rows(); ++i) {
    auto row = v.row(i);
    for (std::size_t j = 0; j < v.cols(); ++j) row[j] *= layer.mvec[j] / norms[j];
  }
  v.require_finite("effective_weight");
  return v;
}

template <std::floating_point T>
BasicMatrix<T> forward(const NormalizedLowRankLinear<T>& layer, const BasicMatrix<T>& x) {
  if (x.rows() != layer.in_dim()) {
    throw ShapeError("forward: input has " + std::to_string(x.rows()) + " rows, layer expects " +
                     std::to_string(layer.in_dim()));
  }
  return matmul(effective_weight(layer), x);
}

/// Gradients of a loss L given x and dy = ∂L/∂y for y = forward(layer, x).
template <std::floating_point T>
LayerGradients<T> backward(const NormalizedLowRankLinear<T>& layer, const BasicMatrix<T>& x,
                           const BasicMatrix<T>& dy) {
  const std::size_t k = layer.out_dim();
  const std::size_t m = layer.in_dim();
  if (x.rows() != m || dy.rows() != k || x.cols() != dy.cols()) {
    throw ShapeError("backward: x is " + detail::shape_str(x.rows(), x.cols()) + ", dy is " +
                     detail::shape_str(dy.rows(), dy.cols()) + " for a " +
                     detail::shape_str(k, m) + " layer");
  }
  const BasicMatrix<T> v = direction_matrix(layer);
  const auto norms = column_norms(v);
  detail::require_no_zero_column(norms, "backward");

  const BasicMatrix<T> g = matmul_nt(dy, x);  // ∂L/∂W_eff, k x m
  LayerGradients<T> out;
  out.d_mvec.assign(m, T{0});
  BasicMatrix<T> dv(k, m);
  BasicMatrix<T> w_eff(k, m);
  for (std::size_t j = 0; j < m; ++j) {
    const T inv = T{1} / norms[j];
    T radial{0};
    for (std::size_t i = 0; i < k; ++i) radial += v(i, j) * inv * g(i, j);
    out.d_mvec[j] = radial;
    const T coef = layer.mvec[j] * inv;
    for (std::size_t i = 0; i < k; ++i) {
      const T vhat = v(i, j) * inv;
      dv(i, j) = layer.detach_norm ? coef * g(i, j) : coef * (g(i, j) - vhat * radial);
      w_eff(i, j) = layer.mvec[j] * vhat;
    }
  }
  out.d_i = matmul_nt(dv, layer.j_adapter);
  out.d_j = matmul_tn(layer.i_adapter, dv);
  out.d_input = matmul_tn(w_eff, dy);
  return out;
}

/// Folds magnitude and adapters into one dense weight.
template <std::floating_point T>
BasicMatrix<T> merge(const NormalizedLowRankLinear<T>& layer) {
  return effective_weight(layer);
}

// ---------------------------------------------------------------------------
// Baseline parameterizations used by the comparison optimizers.

/// Plain dense weight, trained directly.
template <std::floating_point T>
struct DenseLinear {
  BasicMatrix<T> w;

  std::size_t out_dim() const noexcept { return w.rows(); }
  std::size_t in_dim() const noexcept { return w.cols(); }
  std::size_t trainable_count() const noexcept { return w.size(); }
};

template <std::floating_point T>
struct DenseGradients {
  BasicMatrix<T> d_w;
  BasicMatrix<T> d_input;
};

template <std::floating_point T>
BasicMatrix<T> effective_weight(const DenseLinear<T>& layer) {
  return layer.w;
}

template <std::floating_point T>
BasicMatrix<T> forward(const DenseLinear<T>& layer, const BasicMatrix<T>& x) {
  if (x.rows() != layer.in_dim()) throw ShapeError("forward: input rows");
  return matmul(layer.w, x);
}

template <std::floating_point T>
DenseGradients<T> backward(const DenseLinear<T>& layer, const BasicMatrix<T>& x,
                           const BasicMatrix<T>& dy) {
  if (x.rows() != layer.in_dim() || dy.rows() != layer.out_dim() || x.cols() != dy.cols()) {
    throw ShapeError("backward: shape mismatch");
  }
  return {matmul_nt(dy, x), matmul_tn(layer.w, dy)};
}

/// W0 + I·J without normalization (LoRA).
template <std::floating_point T>
struct LowRankLinear {
  BasicMatrix<T> w0;
  BasicMatrix<T> i_adapter;
  BasicMatrix<T> j_adapter;

  std::size_t out_dim() const noexcept { return w0.rows(); }
  std::size_t in_dim() const noexcept { return w0.cols(); }
  std::size_t trainable_count() const noexcept { return i_adapter.size() + j_adapter.size(); }
};

template <std::floating_point T>
struct LowRankGradients {
  BasicMatrix<T> d_i;
  BasicMatrix<T> d_j;
  BasicMatrix<T> d_input;
};

template <std::floating_point T>
LowRankLinear<T> init_lora_layer(const BasicMatrix<T>& w0, std::size_t r, std::uint64_t seed) {
  const std::size_t lim = std::min(w0.rows(), w0.cols());
  if (r < 1 || r > lim) throw RangeError("init_lora_layer: adapter rank out of range");
  Rng rng(seed);
  return {w0, gaussian_matrix<T>(w0.rows(), r, T{1} / std::sqrt(static_cast<T>(r)), rng),
          BasicMatrix<T>::zeros(r, w0.cols())};
}

template <std::floating_point T>
BasicMatrix<T> effective_weight(const LowRankLinear<T>& layer) {
  return layer.w0 + matmul(layer.i_adapter, layer.j_adapter);
}

template <std::floating_point T>
BasicMatrix<T> forward(const LowRankLinear<T>& layer, const BasicMatrix<T>& x) {
  if (x.rows() != layer.in_dim()) throw ShapeError("forward: input rows");
  return matmul(effective_weight(layer), x);
}

template <std::floating_point T>
LowRankGradients<T> backward(const LowRankLinear<T>& layer, const BasicMatrix<T>& x,
                             const BasicMatrix<T>& dy) {
  if (x.rows() != layer.in_dim() || dy.rows() != layer.out_dim() || x.cols() != dy.cols()) {
    throw ShapeError("backward: shape mismatch");
  }
  const BasicMatrix<T> g = matmul_nt(dy, x);
  return {matmul_nt(g, layer.j_adapter), matmul_tn(layer.i_adapter, g),
          matmul_tn(effective_weight(layer), dy)};
}

}  // namespace gnlorp
