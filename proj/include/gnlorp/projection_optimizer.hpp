// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam with optional low-rank gradient projection.
//
// A projected slot keeps orthonormal bases computed from the truncated SVD of
// its gradient. Between refreshes the gradient is compressed through those
// bases, Adam runs on the compact matrix, and the result is lifted back and
// scaled by α_s. Bases are recomputed from the current raw gradient whenever
// t mod T == 0.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gnlorp/errors.hpp"
#include "gnlorp/layers.hpp"
#include "gnlorp/linalg.hpp"
#include "gnlorp/quant8.hpp"

namespace gnlorp {

enum class StateStorage { Dense64, Dense32, Quant8 };
enum class ProjectionMode { Auto, LeftOnly, RightOnly, TwoSided };
enum class Method { FullAdam, LoraAdam, DoraAdam, GaloreAdam, GradNormLoRP };

// How Auto picks an axis. Adapter gradients compress their longer axis, dense
// GaLore-style gradients their shorter one.
enum class AutoAxis { Longer, Shorter };

inline constexpr Method kAllMethods[] = {Method::FullAdam, Method::LoraAdam, Method::DoraAdam,
                                         Method::GaloreAdam, Method::GradNormLoRP};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::FullAdam: return "FullAdam";
    case Method::LoraAdam: return "LoraAdam";
    case Method::DoraAdam: return "DoraAdam";
    case Method::GaloreAdam: return "GaloreAdam";
    case Method::GradNormLoRP: return "GradNormLoRP";
  }
  return "?";
}

inline std::string_view to_string(ProjectionMode m) {
  switch (m) {
    case ProjectionMode::Auto: return "Auto";
    case ProjectionMode::LeftOnly: return "LeftOnly";
    case ProjectionMode::RightOnly: return "RightOnly";
    case ProjectionMode::TwoSided: return "TwoSided";
  }
  return "?";
}

inline std::string_view to_string(StateStorage s) {
  switch (s) {
    case StateStorage::Dense64: return "Dense64";
    case StateStorage::Dense32: return "Dense32";
    case StateStorage::Quant8: return "Quant8";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

inline ProjectionMode parse_projection_mode(std::string_view s) {
  for (auto m : {ProjectionMode::Auto, ProjectionMode::LeftOnly, ProjectionMode::RightOnly,
                 ProjectionMode::TwoSided})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown projection mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Moment storage

/// With `sqrt_domain`, 8-bit storage encodes √v rounded up and decodes its
/// square. Used for the second moment: linear codes send small entries to
/// zero, and m/√v then explodes on the next step.
template <std::floating_point T>
class MomentBuffer {
 public:
  MomentBuffer() = default;
  MomentBuffer(std::size_t rows, std::size_t cols, StateStorage storage, bool sqrt_domain = false)
      : rows_(rows), cols_(cols), storage_(storage), sqrt_domain_(sqrt_domain) {
    const std::size_t n = rows * cols;
    switch (storage) {
      case StateStorage::Dense64: d64_.assign(n, 0.0); break;
      case StateStorage::Dense32: d32_.assign(n, 0.0f); break;
      case StateStorage::Quant8: q_ = Quant8Tensor(n); break;
    }
  }

  BasicMatrix<T> load() const {
    BasicMatrix<T> m(rows_, cols_);
    auto out = m.data();
    switch (storage_) {
      case StateStorage::Dense64:
        std::transform(d64_.begin(), d64_.end(), out.begin(), [](double v) { return T(v); });
        break;
      case StateStorage::Dense32:
        std::transform(d32_.begin(), d32_.end(), out.begin(), [](float v) { return T(v); });
        break;
      case StateStorage::Quant8:
        q_.load(out);
        if (sqrt_domain_)
          for (auto& v : out) v *= v;
        break;
    }
    return m;
  }

  void store(const BasicMatrix<T>& m) {
    if (m.rows() != rows_ || m.cols() != cols_) throw ShapeError("MomentBuffer::store");
    const auto in = m.data();
    switch (storage_) {
      case StateStorage::Dense64:
        std::transform(in.begin(), in.end(), d64_.begin(), [](T v) { return double(v); });
        break;
      case StateStorage::Dense32:
        std::transform(in.begin(), in.end(), d32_.begin(), [](T v) { return float(v); });
        break;
      case StateStorage::Quant8:
        if (sqrt_domain_) {
          std::vector<T> roots(in.size());
          std::transform(in.begin(), in.end(), roots.begin(), [](T v) { return std::sqrt(v); });
          q_.store(std::span<const T>(roots), QuantRounding::Up);
        } else {
          q_.store(in);
        }
        break;
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t elements() const noexcept { return rows_ * cols_; }
  std::size_t bytes() const noexcept {
    switch (storage_) {
      case StateStorage::Dense64: return elements() * 8;
      case StateStorage::Dense32: return elements() * 4;
      case StateStorage::Quant8: return q_.bytes();
    }
    return 0;
  }
  StateStorage storage() const noexcept { return storage_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  StateStorage storage_ = StateStorage::Dense64;
  bool sqrt_domain_ = false;
  std::vector<double> d64_;
  std::vector<float> d32_;
  Quant8Tensor q_;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point T>
struct ProjectedAdamState {
  MomentBuffer<T> m1;
  MomentBuffer<T> m2;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  StateStorage storage = StateStorage::Dense64;

  std::size_t elements() const noexcept { return m1.elements() + m2.elements(); }
  std::size_t bytes() const noexcept { return m1.bytes() + m2.bytes(); }
};

template <std::floating_point T>
ProjectedAdamState<T> make_adam_state(std::size_t rows, std::size_t cols, StateStorage storage,
                                      const AdamHyper& h = {}) {
  return {MomentBuffer<T>(rows, cols, storage), MomentBuffer<T>(rows, cols, storage, true), 0,
          h.beta1, h.beta2, h.eps, storage};
}

/// One bias-corrected Adam step. Returns the update to subtract from the
/// parameter. Quantized moments are decoded, advanced in full precision (the
/// update uses these values), then re-encoded.
template <std::floating_point T>
BasicMatrix<T> adam_step(ProjectedAdamState<T>& s, const BasicMatrix<T>& g, double lr) {
  if (g.rows() != s.m1.rows() || g.cols() != s.m1.cols()) {
    throw ShapeError("adam_step: gradient " + detail::shape_str(g.rows(), g.cols()) +
                     " vs state " + detail::shape_str(s.m1.rows(), s.m1.cols()));
  }
  BasicMatrix<T> m1 = s.m1.load();
  BasicMatrix<T> m2 = s.m2.load();
  ++s.step;
  const T b1 = T(s.beta1), b2 = T(s.beta2);
  const T c1 = T(1) / (T(1) - T(std::pow(s.beta1, double(s.step))));
  const T c2 = T(1) / (T(1) - T(std::pow(s.beta2, double(s.step))));
  BasicMatrix<T> upd(g.rows(), g.cols());
  auto gd = g.data();
  auto a = m1.data(), b = m2.data(), u = upd.data();
  for (std::size_t i = 0; i < gd.size(); ++i) {
    a[i] = b1 * a[i] + (T(1) - b1) * gd[i];
    b[i] = b2 * b[i] + (T(1) - b2) * gd[i] * gd[i];
    u[i] = T(lr) * (a[i] * c1) / (std::sqrt(b[i] * c2) + T(s.eps));
  }
  s.m1.store(m1);
  s.m2.store(m2);
  upd.require_finite("adam_step");
  return upd;
}

// ---------------------------------------------------------------------------
// Projectors

template <std::floating_point T>
struct ProjectorPair {
  std::optional<BasicMatrix<T>> left;   // rows x c
  std::optional<BasicMatrix<T>> right;  // cols x c
  std::int64_t last_refresh_step = 0;
  ProjectionMode mode = ProjectionMode::LeftOnly;
  // Set when the source gradient was exactly zero and canonical vectors were used.
  bool degenerate = false;

  std::size_t elements() const noexcept {
    return (left ? left->size() : 0) + (right ? right->size() : 0);
  }
  T orthonormality_error() const {
    T e{0};
    if (left) e = std::max(e, gnlorp::orthonormality_error(*left));
    if (right) e = std::max(e, gnlorp::orthonormality_error(*right));
    return e;
  }
};

inline ProjectionMode resolve_mode(std::size_t rows, std::size_t cols, ProjectionMode mode,
                                   AutoAxis axis = AutoAxis::Longer) {
  if (mode != ProjectionMode::Auto) return mode;
  const bool tall = rows >= cols;
  if (axis == AutoAxis::Longer) return tall ? ProjectionMode::LeftOnly : ProjectionMode::RightOnly;
  return tall ? ProjectionMode::RightOnly : ProjectionMode::LeftOnly;
}

/// Largest admissible projection rank: the projected axis for one-sided modes,
/// the smaller dimension for two-sided.
inline std::size_t max_projection_rank(std::size_t rows, std::size_t cols, ProjectionMode mode) {
  switch (mode) {
    case ProjectionMode::LeftOnly: return rows;
    case ProjectionMode::RightOnly: return cols;
    default: return std::min(rows, cols);
  }
}

/// Shape of project_gradient's output for a rows x cols gradient.
inline std::pair<std::size_t, std::size_t> projected_shape(std::size_t rows, std::size_t cols,
                                                           ProjectionMode mode, std::size_t c) {
  switch (mode) {
    case ProjectionMode::LeftOnly: return {c, cols};
    case ProjectionMode::RightOnly: return {rows, c};
    case ProjectionMode::TwoSided: return {c, c};
    case ProjectionMode::Auto: break;
  }
  throw RangeError("projected_shape: unresolved Auto mode");
}

namespace detail {

template <typename T>
BasicMatrix<T> canonical_slice(std::size_t n, std::size_t c) {
  BasicMatrix<T> b(n, c);
  for (std::size_t i = 0; i < c; ++i) b(i, i) = T{1};
  return b;
}

/// Top-c left singular vectors of a nonzero g. A full-length basis is returned
/// as the identity: every orthonormal basis of the whole axis spans the same
/// space, and the canonical one leaves Adam's per-coordinate scaling intact.
template <typename T>
BasicMatrix<T> left_basis(const BasicMatrix<T>& g, std::size_t c, std::uint64_t seed) {
  const std::size_t n = g.rows();
  if (c == n) return BasicMatrix<T>::identity(n);
  const std::size_t mn = std::min(g.rows(), g.cols());
  if (c <= mn) return truncated_svd(g, c, seed).u;
  // Fewer singular directions than requested: complete with canonical vectors.
  const BasicMatrix<T> u = truncated_svd(g, mn, seed).u;
  BasicMatrix<T> y(n, c);
  for (std::size_t j = 0; j < mn; ++j) y.set_column(j, u.column(j));
  return orthonormalize_columns(y);
}

}  // namespace detail

/// Bases for `g` under `mode` (Auto resolves toward the longer axis).
template <std::floating_point T>
ProjectorPair<T> compute_projectors(const BasicMatrix<T>& g, std::size_t c, ProjectionMode mode,
                                    std::uint64_t seed, std::int64_t step = 0) {
  mode = resolve_mode(g.rows(), g.cols(), mode);
  const std::size_t lim = max_projection_rank(g.rows(), g.cols(), mode);
  if (c < 1 || c > lim) {
    throw RangeError("compute_projectors: rank " + std::to_string(c) + " outside [1, " +
                     std::to_string(lim) + "] for a " + detail::shape_str(g.rows(), g.cols()) +
                     " gradient in " + std::string(to_string(mode)) + " mode");
  }
  ProjectorPair<T> p;
  p.mode = mode;
  p.last_refresh_step = step;
  const bool want_left = mode != ProjectionMode::RightOnly;
  const bool want_right = mode != ProjectionMode::LeftOnly;
  if (is_all_zero(g)) {
    p.degenerate = true;
    if (want_left) p.left = detail::canonical_slice<T>(g.rows(), c);
    if (want_right) p.right = detail::canonical_slice<T>(g.cols(), c);
    return p;
  }
  if (want_left) p.left = detail::left_basis(g, c, seed);
  if (want_right) p.right = detail::left_basis(transpose(g), c, seed);
  return p;
}

template <std::floating_point T>
BasicMatrix<T> project_gradient(const BasicMatrix<T>& g, const ProjectorPair<T>& p) {
  if (p.left && p.left->rows() != g.rows()) throw ShapeError("project_gradient: left basis rows");
  if (p.right && p.right->rows() != g.cols()) throw ShapeError("project_gradient: right basis rows");
  switch (p.mode) {
    case ProjectionMode::LeftOnly: return matmul_tn(*p.left, g);
    case ProjectionMode::RightOnly: return matmul(g, *p.right);
    case ProjectionMode::TwoSided: return matmul(matmul_tn(*p.left, g), *p.right);
    case ProjectionMode::Auto: break;
  }
  throw RangeError("project_gradient: unresolved Auto mode");
}

template <std::floating_point T>
BasicMatrix<T> lift_update(const BasicMatrix<T>& u, const ProjectorPair<T>& p, T scale) {
  if (p.left && p.left->cols() != u.rows()) throw ShapeError("lift_update: left basis columns");
  if (p.right && p.right->cols() != u.cols()) throw ShapeError("lift_update: right basis columns");
  switch (p.mode) {
    case ProjectionMode::LeftOnly: return scale * matmul(*p.left, u);
    case ProjectionMode::RightOnly: return scale * matmul_nt(u, *p.right);
    case ProjectionMode::TwoSided: return scale * matmul_nt(matmul(*p.left, u), *p.right);
    case ProjectionMode::Auto: break;
  }
  throw RangeError("lift_update: unresolved Auto mode");
}

// ---------------------------------------------------------------------------
// Configuration

struct OptimizerConfig {
  double lr = 0.01;
  double scale = 0.25;               // α_s
  std::int64_t update_freq = 250;    // T
  std::size_t proj_rank = 0;         // 0 follows the adapter rank
  ProjectionMode mode = ProjectionMode::Auto;
  Method method = Method::GradNormLoRP;
  bool quantize = false;
  std::uint64_t seed = 0;
  bool detach_norm = false;
  bool reset_state_on_refresh = false;
  AdamHyper adam;
};

inline void validate(const OptimizerConfig& c) {
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw ConfigError("optimizer.lr must be >= 0");
  if (!(c.scale > 0.0) || !std::isfinite(c.scale)) throw ConfigError("optimizer.scale must be > 0");
  if (c.update_freq < 1) throw ConfigError("optimizer.update_freq must be >= 1");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) throw ConfigError("optimizer.beta1 outside [0, 1)");
  if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) throw ConfigError("optimizer.beta2 outside [0, 1)");
  if (!(c.adam.eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
}

/// Full-precision storage follows the compute type unless 8-bit states are on.
template <std::floating_point T>
StateStorage storage_for(const OptimizerConfig& c) {
  if (c.quantize) return StateStorage::Quant8;
  return sizeof(T) >= 8 ? StateStorage::Dense64 : StateStorage::Dense32;
}

/// Tolerance for BᵀB = I checked at every refresh.
template <std::floating_point T>
constexpr T orthonormality_tolerance() {
  return sizeof(T) >= 8 ? T(1e-8) : T(1e-5);
}

// ---------------------------------------------------------------------------
// One trainable tensor with its Adam state and, optionally, a projector.

struct SlotOptions {
  bool projected = false;
  std::size_t proj_rank = 1;
  ProjectionMode mode = ProjectionMode::Auto;
  AutoAxis auto_axis = AutoAxis::Longer;
  std::int64_t update_freq = 250;
  double scale = 1.0;
  double lr = 0.01;
  StateStorage storage = StateStorage::Dense64;
  AdamHyper adam;
  bool reset_state_on_refresh = false;
  std::uint64_t seed = 0;
};

struct RefreshEvent {
  std::int64_t step = 0;
  double orthonormality_error = 0.0;
  bool degenerate = false;
};

template <std::floating_point T>
class AdamSlot {
 public:
  AdamSlot() = default;
  AdamSlot(std::size_t rows, std::size_t cols, SlotOptions opt)
      : rows_(rows), cols_(cols), opt_(std::move(opt)) {
    if (opt_.projected) {
      mode_ = resolve_mode(rows, cols, opt_.mode, opt_.auto_axis);
      rank_ = std::min(opt_.proj_rank, max_projection_rank(rows, cols, mode_));
      if (rank_ < 1) throw ConfigError("projection rank must be >= 1");
      const auto [r, c] = projected_shape(rows, cols, mode_, rank_);
      state_ = make_adam_state<T>(r, c, opt_.storage, opt_.adam);
    } else {
      state_ = make_adam_state<T>(rows, cols, opt_.storage, opt_.adam);
    }
  }

  /// Applies one step to `param` and returns the delta that was subtracted.
  BasicMatrix<T> step(BasicMatrix<T>& param, const BasicMatrix<T>& grad, std::int64_t t) {
    if (t < 0) throw RangeError("optimizer step index must be >= 0");
    if (grad.rows() != rows_ || grad.cols() != cols_ || param.rows() != rows_ ||
        param.cols() != cols_) {
      throw ShapeError("AdamSlot::step: expected " + detail::shape_str(rows_, cols_));
    }
    last_refreshed_ = false;
    BasicMatrix<T> delta;
    if (!opt_.projected) {
      delta = adam_step(state_, grad, opt_.lr);
    } else {
      // TODO: add an opt-in early refresh while pair_->degenerate; I's t=0
      // gradient is zero because J starts at zero, so I keeps canonical rows
      // until the first scheduled refresh.
      if (!pair_ || t % opt_.update_freq == 0) refresh(grad, t);
      const BasicMatrix<T> upd = adam_step(state_, project_gradient(grad, *pair_), opt_.lr);
      delta = lift_update(upd, *pair_, T(opt_.scale));
    }
    subtract_scaled(param, T{1}, delta);
    param.require_finite("optimizer step");
    return delta;
  }

  bool projected() const noexcept { return opt_.projected; }
  bool refreshed_last_step() const noexcept { return last_refreshed_; }
  const std::optional<ProjectorPair<T>>& projector() const noexcept { return pair_; }
  const ProjectedAdamState<T>& state() const noexcept { return state_; }
  const std::vector<RefreshEvent>& refresh_log() const noexcept { return log_; }
  std::size_t refresh_count() const noexcept { return log_.size(); }
  std::size_t projection_rank() const noexcept { return rank_; }
  ProjectionMode mode() const noexcept { return mode_; }

  std::size_t state_elements() const noexcept { return state_.elements(); }
  std::size_t state_bytes() const noexcept { return state_.bytes(); }
  std::size_t projector_elements() const noexcept {
    if (pair_) return pair_->elements();
    if (!opt_.projected) return 0;
    // Not yet refreshed: report what the first refresh will allocate.
    return (mode_ != ProjectionMode::RightOnly ? rows_ * rank_ : 0) +
           (mode_ != ProjectionMode::LeftOnly ? cols_ * rank_ : 0);
  }

 private:
  void refresh(const BasicMatrix<T>& grad, std::int64_t t) {
    pair_ = compute_projectors(grad, rank_, mode_, opt_.seed + static_cast<std::uint64_t>(t), t);
    const double err = double(pair_->orthonormality_error());
    if (err > double(orthonormality_tolerance<T>())) {
      throw ConvergenceError("projector basis lost orthonormality (error " + std::to_string(err) + ")",
                             0);
    }
    log_.push_back({t, err, pair_->degenerate});
    last_refreshed_ = true;
    if (opt_.reset_state_on_refresh) {
      state_ = make_adam_state<T>(state_.m1.rows(), state_.m1.cols(), opt_.storage, opt_.adam);
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  SlotOptions opt_;
  ProjectionMode mode_ = ProjectionMode::Auto;
  std::size_t rank_ = 0;
  ProjectedAdamState<T> state_;
  std::optional<ProjectorPair<T>> pair_;
  std::vector<RefreshEvent> log_;
  bool last_refreshed_ = false;
};

// ---------------------------------------------------------------------------
// Per-layer optimizers

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (a + 1)) ^ (0xbf58476d1ce4e5b9ULL * (b + 1));
  x ^= x >> 31;
  return x;
}

template <typename T>
SlotOptions dense_slot(const OptimizerConfig& c) {
  SlotOptions o;
  o.lr = c.lr;
  o.storage = storage_for<T>(c);
  o.adam = c.adam;
  return o;
}

template <typename T>
SlotOptions projected_slot(const OptimizerConfig& c, std::size_t rank, AutoAxis axis,
                           std::uint64_t seed) {
  SlotOptions o = dense_slot<T>(c);
  o.projected = true;
  o.proj_rank = c.proj_rank == 0 ? rank : c.proj_rank;
  o.mode = c.mode;
  o.auto_axis = axis;
  o.update_freq = c.update_freq;
  o.scale = c.scale;
  o.reset_state_on_refresh = c.reset_state_on_refresh;
  o.seed = seed;
  return o;
}

template <typename T>
BasicMatrix<T> as_row(const std::vector<T>& v) {
  return BasicMatrix<T>(1, v.size(), v);
}

}  // namespace detail

template <std::floating_point T>
struct NormalizedStepDeltas {
  std::vector<T> d_mvec;
  BasicMatrix<T> d_i;
  BasicMatrix<T> d_j;
};

/// GradNormLoRP (projected adapters) or DoraAdam (plain Adam on the same
/// parameterization). mvec always gets its own unprojected Adam state.
template <std::floating_point T>
class NormalizedLayerOptimizer {
 public:
  NormalizedLayerOptimizer(const NormalizedLowRankLinear<T>& layer, const OptimizerConfig& cfg,
                           std::size_t layer_index = 0) {
    validate(cfg);
    if (cfg.method != Method::GradNormLoRP && cfg.method != Method::DoraAdam) {
      throw ConfigError("NormalizedLayerOptimizer: method " + std::string(to_string(cfg.method)));
    }
    const std::size_t k = layer.out_dim(), m = layer.in_dim(), r = layer.rank;
    mvec_ = AdamSlot<T>(1, m, detail::dense_slot<T>(cfg));
    if (cfg.method == Method::GradNormLoRP) {
      i_ = AdamSlot<T>(k, r, detail::projected_slot<T>(cfg, r, AutoAxis::Longer,
                                                       detail::mix_seed(cfg.seed, layer_index, 0)));
      j_ = AdamSlot<T>(r, m, detail::projected_slot<T>(cfg, r, AutoAxis::Longer,
                                                       detail::mix_seed(cfg.seed, layer_index, 1)));
    } else {
      i_ = AdamSlot<T>(k, r, detail::dense_slot<T>(cfg));
      j_ = AdamSlot<T>(r, m, detail::dense_slot<T>(cfg));
    }
  }

  NormalizedStepDeltas<T> step(NormalizedLowRankLinear<T>& layer, const LayerGradients<T>& g,
                               std::int64_t t) {
    NormalizedStepDeltas<T> d;
    d.d_i = i_.step(layer.i_adapter, g.d_i, t);
    d.d_j = j_.step(layer.j_adapter, g.d_j, t);
    BasicMatrix<T> mv = detail::as_row(layer.mvec);
    const BasicMatrix<T> dm = mvec_.step(mv, detail::as_row(g.d_mvec), t);
    layer.mvec.assign(mv.data().begin(), mv.data().end());
    d.d_mvec.assign(dm.data().begin(), dm.data().end());
    return d;
  }

  const AdamSlot<T>& i_slot() const noexcept { return i_; }
  const AdamSlot<T>& j_slot() const noexcept { return j_; }
  const AdamSlot<T>& mvec_slot() const noexcept { return mvec_; }

  std::size_t state_elements() const noexcept {
    return i_.state_elements() + j_.state_elements() + mvec_.state_elements();
  }
  std::size_t state_bytes() const noexcept {
    return i_.state_bytes() + j_.state_bytes() + mvec_.state_bytes();
  }
  std::size_t projector_elements() const noexcept {
    return i_.projector_elements() + j_.projector_elements();
  }

 private:
  AdamSlot<T> i_, j_, mvec_;
};

/// One GradNormLoRP step on a layer: refresh projectors when t mod T == 0,
/// then update I and J in projected space and mvec densely.
template <std::floating_point T>
NormalizedStepDeltas<T> gradnormlorp_step(NormalizedLayerOptimizer<T>& opt,
                                          NormalizedLowRankLinear<T>& layer,
                                          const LayerGradients<T>& grads, std::int64_t t) {
  return opt.step(layer, grads, t);
}

/// FullAdam (plain) or GaloreAdam (projected dense gradient).
template <std::floating_point T>
class DenseLayerOptimizer {
 public:
  DenseLayerOptimizer(const DenseLinear<T>& layer, const OptimizerConfig& cfg,
                      std::size_t adapter_rank, std::size_t layer_index = 0) {
    validate(cfg);
    if (cfg.method == Method::GaloreAdam) {
      w_ = AdamSlot<T>(layer.out_dim(), layer.in_dim(),
                       detail::projected_slot<T>(cfg, adapter_rank, AutoAxis::Shorter,
                                                 detail::mix_seed(cfg.seed, layer_index, 2)));
    } else if (cfg.method == Method::FullAdam) {
      w_ = AdamSlot<T>(layer.out_dim(), layer.in_dim(), detail::dense_slot<T>(cfg));
    } else {
      throw ConfigError("DenseLayerOptimizer: method " + std::string(to_string(cfg.method)));
    }
  }

  BasicMatrix<T> step(DenseLinear<T>& layer, const DenseGradients<T>& g, std::int64_t t) {
    return w_.step(layer.w, g.d_w, t);
  }

  const AdamSlot<T>& w_slot() const noexcept { return w_; }
  std::size_t state_elements() const noexcept { return w_.state_elements(); }
  std::size_t state_bytes() const noexcept { return w_.state_bytes(); }
  std::size_t projector_elements() const noexcept { return w_.projector_elements(); }

 private:
  AdamSlot<T> w_;
};

/// LoRA adapters trained with plain Adam.
template <std::floating_point T>
class LowRankLayerOptimizer {
 public:
  LowRankLayerOptimizer(const LowRankLinear<T>& layer, const OptimizerConfig& cfg) {
    validate(cfg);
    i_ = AdamSlot<T>(layer.i_adapter.rows(), layer.i_adapter.cols(), detail::dense_slot<T>(cfg));
    j_ = AdamSlot<T>(layer.j_adapter.rows(), layer.j_adapter.cols(), detail::dense_slot<T>(cfg));
  }

  void step(LowRankLinear<T>& layer, const LowRankGradients<T>& g, std::int64_t t) {
    i_.step(layer.i_adapter, g.d_i, t);
    j_.step(layer.j_adapter, g.d_j, t);
  }

  std::size_t state_elements() const noexcept { return i_.state_elements() + j_.state_elements(); }
  std::size_t state_bytes() const noexcept { return i_.state_bytes() + j_.state_bytes(); }
  std::size_t projector_elements() const noexcept { return 0; }

 private:
  AdamSlot<T> i_, j_;
};

}  // namespace gnlorp
