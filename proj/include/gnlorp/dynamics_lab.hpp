// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Simulation of the linear gradient flow
//
//     D_t = A − B·W_t·C,    W_{t+1} = W_t + α·D_t
//
// with B, C symmetric PSD. Substituting one into the other gives
// D_{t+1} = D_t − α·B·D_t·C, which is what we iterate: D is kept at unit
// Frobenius norm with its scale tracked in log space, so decaying directions
// never cancel against A and the recorded stable ranks stay accurate long
// after ‖D_t‖ would underflow.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "gnlorp/errors.hpp"
#include "gnlorp/format.hpp"
#include "gnlorp/linalg.hpp"

namespace gnlorp {

struct DynamicsSystem {
  Matrix a;        // k x m
  Matrix b;        // k x k PSD
  Matrix c;        // m x m PSD
  Matrix w;        // k x m iterate
  double step_size = 0.1;
  std::int64_t t = 0;
  // Eigen-decompositions used to build b and c. Columns of q_b / q_c are the
  // eigenvectors for spectrum_b / spectrum_c in the given order.
  std::vector<double> spectrum_b;
  std::vector<double> spectrum_c;
  Matrix q_b;
  Matrix q_c;

  std::size_t rows() const noexcept { return a.rows(); }
  std::size_t cols() const noexcept { return a.cols(); }
};

struct RankTrajectory {
  std::vector<std::int64_t> steps;
  std::vector<double> stable_ranks;
  std::vector<double> bound_values;       // lemma1_bound with unit constant
  std::vector<double> calibrated_bounds;  // 1 + K·Σ ratio^{2t}, K from D_0
  std::vector<double> excess;             // Σ_{i≥2} σ_i² / σ_1², i.e. stable_rank − 1
};

namespace detail {

inline Matrix random_orthogonal(std::size_t n, Rng& rng) {
  return orthonormalize_columns(gaussian_matrix<double>(n, n, 1.0, rng));
}

inline Matrix psd_from_spectrum(const Matrix& q, const std::vector<double>& spec) {
  const bool isotropic =
      std::all_of(spec.begin(), spec.end(), [&](double v) { return v == spec.front(); });
  if (isotropic) return spec.front() * Matrix::identity(spec.size());
  Matrix qd = q;
  for (std::size_t i = 0; i < qd.rows(); ++i)
    for (std::size_t j = 0; j < qd.cols(); ++j) qd(i, j) *= spec[j];
  Matrix s = matmul_nt(qd, q);
  // Symmetrize against rounding.
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = i + 1; j < s.cols(); ++j) s(i, j) = s(j, i) = 0.5 * (s(i, j) + s(j, i));
  return s;
}

inline void require_spectrum(const std::vector<double>& s, std::size_t n, const char* name) {
  if (s.size() != n) {
    throw ShapeError(std::string(name) + " has " + std::to_string(s.size()) + " entries, expected " +
                     std::to_string(n));
  }
  for (double v : s) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DomainError(std::string(name) + " entry " + std::to_string(v) + " is not a finite non-negative value");
    }
  }
}

struct StableRankParts {
  double stable_rank;
  double excess;
};

inline StableRankParts stable_rank_parts(const Matrix& d) {
  const std::size_t mn = std::min(d.rows(), d.cols());
  if (is_all_zero(d)) throw DegenerateInputError("stable rank of an all-zero gradient");
  if (mn > SvdOptions{}.jacobi_max_dim) {
    const double sr = stable_rank(d);
    return {sr, sr - 1.0};
  }
  const auto s = truncated_svd(d, mn, 0).s;
  double tail = 0.0;
  for (std::size_t i = 1; i < s.size(); ++i) tail += s[i] * s[i];
  const double excess = tail / (s[0] * s[0]);
  return {std::clamp(1.0 + excess, 1.0, double(mn)), excess};
}

}  // namespace detail

/// B = Q_B·diag(spectrum_b)·Q_Bᵀ and C likewise from independent seeded
/// orthogonal factors; A and W_0 are standard Gaussian. An isotropic spectrum
/// yields exactly λ·I. Rejects α·λ_max(B)·λ_max(C) ≥ 2, where the flow diverges.
inline DynamicsSystem make_system(std::size_t k, std::size_t m, const std::vector<double>& spectrum_b,
                                  const std::vector<double>& spectrum_c, std::uint64_t seed,
                                  double alpha = 0.1) {
  if (k < 1 || m < 1) throw RangeError("make_system: dimensions must be >= 1");
  detail::require_spectrum(spectrum_b, k, "spectrum_b");
  detail::require_spectrum(spectrum_c, m, "spectrum_c");
  if (!(alpha > 0.0)) throw DomainError("make_system: step size must be > 0");
  const double lb = *std::max_element(spectrum_b.begin(), spectrum_b.end());
  const double lc = *std::max_element(spectrum_c.begin(), spectrum_c.end());
  if (alpha * lb * lc >= 2.0) {
    throw DomainError("make_system: alpha*lambda_max(B)*lambda_max(C) = " +
                      std::to_string(alpha * lb * lc) + " >= 2 diverges");
  }
  Rng rng(seed);
  DynamicsSystem s;
  s.spectrum_b = spectrum_b;
  s.spectrum_c = spectrum_c;
  s.q_b = detail::random_orthogonal(k, rng);
  s.q_c = detail::random_orthogonal(m, rng);
  s.b = detail::psd_from_spectrum(s.q_b, spectrum_b);
  s.c = detail::psd_from_spectrum(s.q_c, spectrum_c);
  s.a = gaussian_matrix<double>(k, m, 1.0, rng);
  s.w = gaussian_matrix<double>(k, m, 1.0, rng);
  s.step_size = alpha;
  return s;
}

/// The gradient at the current iterate, A − B·W·C.
inline Matrix current_gradient(const DynamicsSystem& s) {
  return s.a - matmul(matmul(s.b, s.w), s.c);
}

/// 1 + Σ_{i≥2} ((1 − α·λ_i·ν₁) / (1 − α·λ₁·ν₁))^{2t}, λ sorted ascending.
inline double lemma1_bound(std::vector<double> spectrum_b, double nu1, double alpha, std::int64_t t) {
  if (spectrum_b.empty()) throw RangeError("lemma1_bound: empty spectrum");
  std::sort(spectrum_b.begin(), spectrum_b.end());
  for (double l : spectrum_b) {
    if (!(alpha * l * nu1 < 1.0)) {
      throw DomainError("lemma1_bound: alpha*lambda*nu1 = " + std::to_string(alpha * l * nu1) +
                        " must be < 1");
    }
  }
  const double base = 1.0 - alpha * spectrum_b[0] * nu1;
  double sum = 0.0;
  for (std::size_t i = 1; i < spectrum_b.size(); ++i) {
    const double r = (1.0 - alpha * spectrum_b[i] * nu1) / base;
    sum += std::pow(r, 2.0 * double(t));
  }
  return 1.0 + sum;
}

/// Constant K with stable_rank(D_t) ≤ 1 + K·Σ_{i≥2} ratio_i^{2t} for every t.
/// In the eigenbases X = Q_Bᵀ·D·Q_C evolves entrywise as
/// x_{t,ij} = (1 − αλ_iν_j)^t·x_{0,ij}; σ₁ ≥ |x_{t,11}| for the slowest pair,
/// and every other row decays at least as fast as its ν₁ entry (given
/// α·λ_i·(ν_j + ν₁) ≤ 2), so K = max_{i≥2} ‖x_{0,i·}‖² / x_{0,11}².
inline double calibration_constant(const DynamicsSystem& s) {
  const Matrix x = matmul(matmul_tn(s.q_b, current_gradient(s)), s.q_c);
  std::vector<std::size_t> ob(s.spectrum_b.size()), oc(s.spectrum_c.size());
  std::iota(ob.begin(), ob.end(), std::size_t{0});
  std::iota(oc.begin(), oc.end(), std::size_t{0});
  std::stable_sort(ob.begin(), ob.end(), [&](auto i, auto j) { return s.spectrum_b[i] < s.spectrum_b[j]; });
  std::stable_sort(oc.begin(), oc.end(), [&](auto i, auto j) { return s.spectrum_c[i] < s.spectrum_c[j]; });
  const double x11 = x(ob[0], oc[0]);
  if (x11 == 0.0) return std::numeric_limits<double>::infinity();
  double k = 0.0;
  for (std::size_t p = 1; p < ob.size(); ++p) {
    double row = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) row += x(ob[p], j) * x(ob[p], j);
    k = std::max(k, row / (x11 * x11));
  }
  return k;
}

inline double smallest(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

/// Runs `steps` updates from the system's current state (mutating it), and
/// records t = 0, record_every, 2·record_every, … ≤ steps.
inline RankTrajectory run_lemma1(DynamicsSystem& s, std::int64_t steps, std::int64_t record_every = 1) {
  if (steps < 1) throw RangeError("run_lemma1: steps must be >= 1");
  if (record_every < 1) throw RangeError("run_lemma1: record_every must be >= 1");
  const double alpha = s.step_size;
  const double nu1 = smallest(s.spectrum_c);
  double lmax = 0.0;
  for (double l : s.spectrum_b) lmax = std::max(lmax, l);
  const bool bound_defined = alpha * lmax * nu1 < 1.0;
  const double kcal = calibration_constant(s);

  Matrix d = current_gradient(s);
  double norm = frobenius_norm(d);
  if (norm == 0.0) throw DegenerateInputError("run_lemma1: initial gradient is zero");
  d = (1.0 / norm) * d;
  double log_scale = std::log(norm);

  RankTrajectory tr;
  const std::int64_t t0 = s.t;
  for (std::int64_t i = 0; i <= steps; ++i) {
    if (i % record_every == 0) {
      const auto parts = detail::stable_rank_parts(d);
      tr.steps.push_back(t0 + i);
      tr.stable_ranks.push_back(parts.stable_rank);
      tr.excess.push_back(parts.excess);
      if (bound_defined) {
        const double b = lemma1_bound(s.spectrum_b, nu1, alpha, i);
        tr.bound_values.push_back(b);
        tr.calibrated_bounds.push_back(1.0 + kcal * (b - 1.0));
      } else {
        tr.bound_values.push_back(std::numeric_limits<double>::quiet_NaN());
        tr.calibrated_bounds.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    if (i == steps) break;
    // W_{t+1} = W_t + α·D_t at true scale; skipped once that scale underflows.
    const double scale = std::exp(log_scale);
    if (scale > 0.0) subtract_scaled(s.w, -alpha * scale, d);
    if (!s.w.all_finite()) throw DivergenceError("run_lemma1: iterate overflowed", t0 + i);
    d = d - alpha * matmul(matmul(s.b, d), s.c);
    norm = frobenius_norm(d);
    if (!std::isfinite(norm)) throw DivergenceError("run_lemma1: gradient overflowed", t0 + i + 1);
    if (norm == 0.0) throw DegenerateInputError("run_lemma1: gradient vanished exactly");
    d = (1.0 / norm) * d;
    log_scale += std::log(norm);
    if (log_scale > 700.0) throw DivergenceError("run_lemma1: gradient norm diverged", t0 + i + 1);
    ++s.t;
  }
  return tr;
}

struct Theorem1Result {
  RankTrajectory z;  // 𝒵_t = A − B·I_t·C
  RankTrajectory h;  // ℋ_t = E − F·J_t·G
  // Joint stable rank, taken as the product of the two, and its bound.
  std::vector<double> product_stable_rank;
  std::vector<double> product_bound;
  // (stable_rank − 1) surrogates and the matching calibrated excess bounds.
  std::vector<double> product_excess;
  std::vector<double> product_excess_bound;
};

/// Two independent flows, I_t with step γ (sys_z.step_size) and J_t with
/// step β (sys_h.step_size).
inline Theorem1Result run_theorem1(DynamicsSystem& sys_z, DynamicsSystem& sys_h, std::int64_t steps,
                                   std::int64_t record_every = 1) {
  Theorem1Result r;
  r.z = run_lemma1(sys_z, steps, record_every);
  r.h = run_lemma1(sys_h, steps, record_every);
  for (std::size_t i = 0; i < r.z.steps.size(); ++i) {
    r.product_stable_rank.push_back(r.z.stable_ranks[i] * r.h.stable_ranks[i]);
    r.product_bound.push_back(r.z.calibrated_bounds[i] * r.h.calibrated_bounds[i]);
    r.product_excess.push_back(r.z.excess[i] * r.h.excess[i]);
    r.product_excess_bound.push_back((r.z.calibrated_bounds[i] - 1.0) *
                                     (r.h.calibrated_bounds[i] - 1.0));
  }
  return r;
}

/// Least-squares slope of log(excess) against step over recorded points past
/// `burn_in` whose excess lies in [lo, hi].
inline double fit_log_excess_slope(const RankTrajectory& tr, std::size_t burn_in, double lo = 1e-13,
                                   double hi = 1e-1) {
  std::vector<double> xs, ys;
  for (std::size_t i = burn_in; i < tr.steps.size(); ++i) {
    if (tr.excess[i] >= lo && tr.excess[i] <= hi) {
      xs.push_back(double(tr.steps[i]));
      ys.push_back(std::log(tr.excess[i]));
    }
  }
  if (xs.size() < 2) throw DegenerateInputError("fit_log_excess_slope: fewer than 2 points in window");
  const double n = double(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

/// First recorded step with stable rank ≤ threshold, or -1.
inline std::int64_t first_step_below(const RankTrajectory& tr, double threshold) {
  for (std::size_t i = 0; i < tr.steps.size(); ++i)
    if (tr.stable_ranks[i] <= threshold) return tr.steps[i];
  return -1;
}

/// CSV with header `step,stable_rank,bound`.
inline void write_trajectory_csv(std::ostream& out, const RankTrajectory& tr) {
  out << "step,stable_rank,bound\n";
  for (std::size_t i = 0; i < tr.steps.size(); ++i) {
    out << tr.steps[i] << ',' << format_double(tr.stable_ranks[i]) << ','
        << format_double(tr.bound_values[i]) << '\n';
  }
}

}  // namespace gnlorp
