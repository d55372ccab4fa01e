// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices, column norms, truncated SVD and stable rank.
//
// Everything here is deterministic: loops have a fixed reduction order and the
// only randomness (the randomized range finder) is driven by an explicit seed.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gnlorp/errors.hpp"

namespace gnlorp {

enum class Precision { F64, F32 };

using Rng = std::mt19937_64;

template <std::floating_point T>
class BasicMatrix {
 public:
  using value_type = T;
  static constexpr Precision precision =
      sizeof(T) >= sizeof(double) ? Precision::F64 : Precision::F32;

  BasicMatrix() = default;

  BasicMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}

  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
    require_finite("construction");
  }

  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), row.begin(), row.end());
    }
    require_finite("construction");
  }

  static BasicMatrix zeros(std::size_t rows, std::size_t cols) {
    return BasicMatrix(rows, cols);
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  static BasicMatrix diagonal(std::span<const T> values) {
    BasicMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    m.require_finite("construction");
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<T> column(std::size_t j) const {
    std::vector<T> c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }
  void set_column(std::size_t j, std::span<const T> values) {
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = values[i];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_finite(const char* op) const {
    if (!all_finite()) {
      throw DomainError(std::string("non-finite matrix entry after ") + op);
    }
  }

  template <std::floating_point U>
  BasicMatrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return BasicMatrix<U>(rows_, cols_, std::move(out));
  }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

namespace detail {

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
void require_same_shape(const BasicMatrix<T>& a, const BasicMatrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s{0};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T norm2(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic

template <std::floating_point T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <std::floating_point T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + detail::shape_str(a.rows(), a.cols()) + " * " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  BasicMatrix<T> c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* ci = c.row(i).data();
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const T aip = a(i, p);
      if (aip == T{0}) continue;
      const T* bp = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  c.require_finite("matmul");
  return c;
}

/// aᵀ·b without materializing the transpose.
template <std::floating_point T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + detail::shape_str(a.rows(), a.cols()) + "^T * " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  BasicMatrix<T> c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const T* bp = b.row(p).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T api = a(p, i);
      if (api == T{0}) continue;
      T* ci = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
  c.require_finite("matmul_tn");
  return c;
}

/// a·bᵀ without materializing the transpose.
template <std::floating_point T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + detail::shape_str(a.rows(), a.cols()) + " * " +
                     detail::shape_str(b.rows(), b.cols()) + "^T");
  }
  BasicMatrix<T> c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = detail::dot(a.row(i), b.row(j));
  c.require_finite("matmul_nt");
  return c;
}

template <std::floating_point T>
BasicMatrix<T> operator+(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require_same_shape(a, b, "add");
  BasicMatrix<T> c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  c.require_finite("add");
  return c;
}

template <std::floating_point T>
BasicMatrix<T> operator-(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require_same_shape(a, b, "subtract");
  BasicMatrix<T> c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
  c.require_finite("subtract");
  return c;
}

template <std::floating_point T>
BasicMatrix<T> operator*(T s, const BasicMatrix<T>& a) {
  BasicMatrix<T> c = a;
  for (auto& v : c.data()) v *= s;
  c.require_finite("scale");
  return c;
}

/// a -= s·b in place.
template <std::floating_point T>
void subtract_scaled(BasicMatrix<T>& a, T s, const BasicMatrix<T>& b) {
  detail::require_same_shape(a, b, "subtract_scaled");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] -= s * bd[i];
  a.require_finite("subtract_scaled");
}

template <std::floating_point T>
T frobenius_norm_sq(const BasicMatrix<T>& a) {
  return detail::dot(a.data(), a.data());
}

template <std::floating_point T>
T frobenius_norm(const BasicMatrix<T>& a) {
  return std::sqrt(frobenius_norm_sq(a));
}

template <std::floating_point T>
T max_abs(const BasicMatrix<T>& a) {
  T m{0};
  for (T v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <std::floating_point T>
T max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  T m{0};
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
  return m;
}

template <std::floating_point T>
bool is_all_zero(const BasicMatrix<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return v == T{0}; });
}

/// Euclidean norm of each column.
template <std::floating_point T>
std::vector<T> column_norms(const BasicMatrix<T>& m) {
  std::vector<T> sq(m.cols(), T{0});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) sq[j] += r[j] * r[j];
  }
  for (auto& v : sq) v = std::sqrt(v);
  return sq;
}

/// max |BᵀB − I|, the orthonormality defect of B's columns.
template <std::floating_point T>
T orthonormality_error(const BasicMatrix<T>& b) {
  const BasicMatrix<T> g = matmul_tn(b, b);
  T err{0};
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      err = std::max(err, std::abs(g(i, j) - (i == j ? T{1} : T{0})));
  return err;
}

template <std::floating_point T>
BasicMatrix<T> gaussian_matrix(std::size_t rows, std::size_t cols, T stddev, Rng& rng) {
  std::normal_distribution<T> dist(T{0}, stddev);
  std::vector<T> data(rows * cols);
  for (auto& v : data) v = dist(rng);
  return BasicMatrix<T>(rows, cols, std::move(data));
}

// ---------------------------------------------------------------------------
// Orthonormalization

namespace detail {

/// Orthonormalizes `cols` in place against `basis` and each other (two passes of
/// modified Gram-Schmidt). A column that collapses is replaced by the canonical
/// vector with the largest residual, so the result always has full column rank.
template <typename T>
void orthonormalize_columns_inplace(std::vector<std::vector<T>>& basis,
                                    std::vector<std::vector<T>>& cols, std::size_t n) {
  const T collapse = std::sqrt(std::numeric_limits<T>::epsilon());
  auto project_out = [&](std::vector<T>& v) {
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) {
        const T d = dot<T>(q, v);
        for (std::size_t i = 0; i < n; ++i) v[i] -= d * q[i];
      }
    }
  };
  for (auto& v : cols) {
    const T before = norm2<T>(v);
    project_out(v);
    T after = norm2<T>(v);
    if (before == T{0} || after <= collapse * before) {
      std::vector<T> best;
      T best_norm{-1};
      for (std::size_t e = 0; e < n; ++e) {
        std::vector<T> cand(n, T{0});
        cand[e] = T{1};
        project_out(cand);
        const T cn = norm2<T>(cand);
        if (cn > best_norm + T{1e-3}) {
          best_norm = cn;
          best = std::move(cand);
        }
      }
      v = std::move(best);
      after = best_norm;
    }
    for (auto& x : v) x /= after;
    basis.push_back(v);
  }
}

}  // namespace detail

/// Orthonormal basis with the same column count as `y` whose leading columns
/// span the leading columns of `y`.
template <std::floating_point T>
BasicMatrix<T> orthonormalize_columns(const BasicMatrix<T>& y) {
  if (y.cols() > y.rows()) {
    throw RangeError("orthonormalize_columns: more columns than rows");
  }
  std::vector<std::vector<T>> cols(y.cols());
  for (std::size_t j = 0; j < y.cols(); ++j) cols[j] = y.column(j);
  std::vector<std::vector<T>> basis;
  detail::orthonormalize_columns_inplace(basis, cols, y.rows());
  BasicMatrix<T> q(y.rows(), y.cols());
  for (std::size_t j = 0; j < basis.size(); ++j) q.set_column(j, basis[j]);
  return q;
}

// ---------------------------------------------------------------------------
// SVD

template <std::floating_point T>
struct SvdResult {
  BasicMatrix<T> u;  // rows x c
  std::vector<T> s;  // c, descending
  BasicMatrix<T> v;  // cols x c

  BasicMatrix<T> reconstruct() const {
    BasicMatrix<T> us = u;
    for (std::size_t i = 0; i < us.rows(); ++i)
      for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= s[j];
    return matmul_nt(us, v);
  }
};

struct SvdOptions {
  int max_iterations = 500;
  // Inputs whose smaller dimension exceeds this use the randomized range finder.
  std::size_t jacobi_max_dim = 64;
  std::size_t oversampling = 8;
  int power_iterations = 2;
};

namespace detail {

/// One-sided (Hestenes) Jacobi on a tall matrix held as columns. On return
/// `cols` holds U·diag(s) and `vcols` the right singular vectors.
template <typename T>
void hestenes_jacobi(std::vector<std::vector<T>>& cols, std::vector<std::vector<T>>& vcols,
                     std::size_t n, int max_sweeps) {
  const std::size_t p = cols.size();
  vcols.assign(p, std::vector<T>(p, T{0}));
  for (std::size_t j = 0; j < p; ++j) vcols[j][j] = T{1};
  const T tol = std::numeric_limits<T>::epsilon() * static_cast<T>(std::max<std::size_t>(n, 1));
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t a = 0; a + 1 < p; ++a) {
      for (std::size_t b = a + 1; b < p; ++b) {
        auto& ca = cols[a];
        auto& cb = cols[b];
        const T alpha = dot<T>(ca, ca);
        const T beta = dot<T>(cb, cb);
        const T gamma = dot<T>(ca, cb);
        if (alpha == T{0} || beta == T{0}) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const T zeta = (beta - alpha) / (T{2} * gamma);
        const T sgn = zeta >= T{0} ? T{1} : T{-1};
        const T t = sgn / (std::abs(zeta) + std::sqrt(T{1} + zeta * zeta));
        const T c = T{1} / std::sqrt(T{1} + t * t);
        const T s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const T x = ca[i];
          const T y = cb[i];
          ca[i] = c * x - s * y;
          cb[i] = s * x + c * y;
        }
        auto& va = vcols[a];
        auto& vb = vcols[b];
        for (std::size_t i = 0; i < p; ++i) {
          const T x = va[i];
          const T y = vb[i];
          va[i] = c * x - s * y;
          vb[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) return;
  }
  throw ConvergenceError("one-sided Jacobi SVD did not converge", max_sweeps);
}

template <typename T>
SvdResult<T> jacobi_svd(const BasicMatrix<T>& m, std::size_t c, int max_sweeps) {
  const bool transposed = m.rows() < m.cols();
  const BasicMatrix<T> a = transposed ? transpose(m) : m;
  const std::size_t n = a.rows();
  const std::size_t p = a.cols();

  std::vector<std::vector<T>> cols(p);
  for (std::size_t j = 0; j < p; ++j) cols[j] = a.column(j);
  std::vector<std::vector<T>> vcols;
  hestenes_jacobi(cols, vcols, n, max_sweeps);

  std::vector<T> sigma(p);
  for (std::size_t j = 0; j < p; ++j) sigma[j] = norm2<T>(cols[j]);
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const T smax = p == 0 ? T{0} : sigma[order[0]];
  const T zero_cut = smax * std::numeric_limits<T>::epsilon() * static_cast<T>(n);

  // Tall-side vectors: normalized columns, with null directions completed.
  std::vector<std::vector<T>> tall_basis;
  std::vector<std::vector<T>> pending;
  std::vector<T> s(c);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t j = order[k];
    if (sigma[j] > zero_cut && sigma[j] > T{0}) {
      std::vector<T> col = cols[j];
      for (auto& x : col) x /= sigma[j];
      tall_basis.push_back(std::move(col));
      s[k] = sigma[j];
    } else {
      pending.emplace_back(n, T{0});
      s[k] = T{0};
    }
  }
  if (!pending.empty()) orthonormalize_columns_inplace(tall_basis, pending, n);

  BasicMatrix<T> tall(n, c);
  BasicMatrix<T> wide(p, c);
  for (std::size_t k = 0; k < c; ++k) {
    tall.set_column(k, tall_basis[k]);
    wide.set_column(k, vcols[order[k]]);
  }

  SvdResult<T> out;
  out.s = std::move(s);
  if (transposed) {
    out.u = std::move(wide);
    out.v = std::move(tall);
  } else {
    out.u = std::move(tall);
    out.v = std::move(wide);
  }
  return out;
}

template <typename T>
SvdResult<T> randomized_svd(const BasicMatrix<T>& m, std::size_t c, std::uint64_t seed,
                            const SvdOptions& opt) {
  const std::size_t l = std::min(c + opt.oversampling, std::min(m.rows(), m.cols()));
  Rng rng(seed);
  const BasicMatrix<T> omega = gaussian_matrix<T>(m.cols(), l, T{1}, rng);
  BasicMatrix<T> q = orthonormalize_columns(matmul(m, omega));
  for (int it = 0; it < opt.power_iterations; ++it) {
    const BasicMatrix<T> z = orthonormalize_columns(matmul_tn(m, q));
    q = orthonormalize_columns(matmul(m, z));
  }
  const BasicMatrix<T> small = matmul_tn(q, m);  // l x cols
  SvdResult<T> inner = jacobi_svd(small, c, opt.max_iterations);
  inner.u = matmul(q, inner.u);
  return inner;
}

template <typename T>
void canonicalize_signs(SvdResult<T>& r) {
  for (std::size_t k = 0; k < r.u.cols(); ++k) {
    std::size_t arg = 0;
    T best{-1};
    for (std::size_t i = 0; i < r.u.rows(); ++i) {
      if (std::abs(r.u(i, k)) > best) {
        best = std::abs(r.u(i, k));
        arg = i;
      }
    }
    if (r.u(arg, k) < T{0}) {
      for (std::size_t i = 0; i < r.u.rows(); ++i) r.u(i, k) = -r.u(i, k);
      for (std::size_t i = 0; i < r.v.rows(); ++i) r.v(i, k) = -r.v(i, k);
    }
  }
}

}  // namespace detail

/// Top-c singular triplets of m. Exact one-sided Jacobi for small inputs,
/// seeded randomized subspace iteration above `opt.jacobi_max_dim`. The largest
/// magnitude entry of every left singular vector is made non-negative.
template <std::floating_point T>
SvdResult<T> truncated_svd(const BasicMatrix<T>& m, std::size_t c, std::uint64_t seed,
                           const SvdOptions& opt = {}) {
  const std::size_t mn = std::min(m.rows(), m.cols());
  if (c < 1 || c > mn) {
    throw RangeError("truncated_svd: rank " + std::to_string(c) + " outside [1, " +
                     std::to_string(mn) + "]");
  }
  SvdResult<T> r = mn <= opt.jacobi_max_dim ? detail::jacobi_svd(m, c, opt.max_iterations)
                                             : detail::randomized_svd(m, c, seed, opt);
  detail::canonicalize_signs(r);
  r.u.require_finite("truncated_svd");
  r.v.require_finite("truncated_svd");
  return r;
}

template <std::floating_point T>
T spectral_norm(const BasicMatrix<T>& m, std::uint64_t seed = 0) {
  return truncated_svd(m, 1, seed).s[0];
}

/// ‖m‖_F² / ‖m‖_2², clamped to [1, min(rows, cols)] against rounding.
template <std::floating_point T>
T stable_rank(const BasicMatrix<T>& m, std::uint64_t seed = 0) {
  if (m.empty() || is_all_zero(m)) {
    throw DegenerateInputError("stable_rank: all-zero matrix");
  }
  const T top = spectral_norm(m, seed);
  const T ratio = frobenius_norm_sq(m) / (top * top);
  const T hi = static_cast<T>(std::min(m.rows(), m.cols()));
  return std::clamp(ratio, T{1}, hi);
}

}  // namespace gnlorp
