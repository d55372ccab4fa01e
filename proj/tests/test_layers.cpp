// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gnlorp/gradcheck.hpp"
#include "gnlorp/layers.hpp"
#include "oracles.hpp"

using namespace gnlorp;

namespace {

// Column-by-column evaluation of M ⊙ (W0 + IJ) / ‖W0 + IJ‖_c with scalar loops.
Matrix effective_weight_loop(const NormalizedLowRankLinear<double>& l) {
  const std::size_t k = l.w0.rows(), m = l.w0.cols(), r = l.rank;
  Matrix out(k, m);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> v(k);
    double nn = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double s = l.w0(i, j);
      for (std::size_t p = 0; p < r; ++p) s += l.i_adapter(i, p) * l.j_adapter(p, j);
      v[i] = s;
      nn += s * s;
    }
    nn = std::sqrt(nn);
    for (std::size_t i = 0; i < k; ++i) out(i, j) = l.mvec[j] * v[i] / nn;
  }
  return out;
}

NormalizedLowRankLinear<double> random_state(std::size_t k, std::size_t m, std::size_t r,
                                             std::mt19937_64& rng) {
  return random_layer_state(k, m, r, rng);
}

}  // namespace

TEST_CASE("init_layer", "[layers]") {
  SECTION("identity base") {
    const auto l = init_layer(Matrix::identity(2), 1, 0);
    CHECK(l.mvec == std::vector<double>{1.0, 1.0});
    CHECK(l.j_adapter == Matrix{{0.0, 0.0}});
    CHECK(l.i_adapter.rows() == 2);
    CHECK(l.i_adapter.cols() == 1);
  }
  SECTION("zero column rejected") {
    CHECK_THROWS_AS(init_layer(Matrix{{3.0, 0.0}, {4.0, 0.0}}, 1, 0), DegenerateInputError);
  }
  SECTION("rank out of range") {
    CHECK_THROWS_AS(init_layer(Matrix::identity(3), 0, 0), RangeError);
    CHECK_THROWS_AS(init_layer(Matrix::identity(3), 4, 0), RangeError);
  }
  SECTION("fresh init reproduces W0") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t k = 2 + trial % 7, m = 2 + (trial * 3) % 9;
      const Matrix w0 = oracle::random_matrix(k, m, rng);
      const std::size_t r = 1 + trial % std::min(k, m);
      const auto l = init_layer(w0, r, trial);
      CHECK(max_abs_diff(effective_weight(l), w0) <= 1e-12);
      CHECK(max_abs_diff(merge(l), w0) <= 1e-12);
    }
  }
  SECTION("adapter init statistics") {
    std::mt19937_64 rng(2);
    const auto l = init_layer(oracle::random_matrix(200, 50, rng), 16, 7);
    double s = 0.0, s2 = 0.0;
    for (double v : l.i_adapter.data()) {
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(l.i_adapter.size());
    CHECK(std::abs(s / n) < 0.02);
    CHECK(std::abs(std::sqrt(s2 / n) - 0.25) < 0.01);
    CHECK(is_all_zero(l.j_adapter));
  }
}

TEST_CASE("effective_weight and forward", "[layers]") {
  SECTION("identity base with overwritten magnitudes") {
    auto l = init_layer(Matrix::identity(2), 1, 0);
    l.mvec = {2.0, 3.0};
    CHECK(effective_weight(l) == Matrix{{2.0, 0.0}, {0.0, 3.0}});
    const Matrix y = forward(l, Matrix{{1.0}, {1.0}});
    CHECK(y == Matrix{{2.0}, {3.0}});
  }
  SECTION("fresh init, unit input picks the first column") {
    std::mt19937_64 rng(3);
    const Matrix w0 = oracle::random_matrix(4, 3, rng);
    const auto l = init_layer(w0, 2, 0);
    Matrix e1(3, 1);
    e1(0, 0) = 1.0;
    const Matrix y = forward(l, e1);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y(i, 0) - w0(i, 0)) <= 1e-12);
  }
  SECTION("random states match the scalar oracle") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const auto l = random_state(2 + trial % 9, 2 + trial % 5, 1 + trial % 2, rng);
      const Matrix w = effective_weight(l);
      CHECK(max_abs_diff(w, effective_weight_loop(l)) <= 1e-12);
      const Matrix x = oracle::random_matrix(l.in_dim(), 3, rng);
      const Matrix ref =
          oracle::from_dense(oracle::naive_matmul(oracle::to_dense(w), oracle::to_dense(x)));
      CHECK(max_abs_diff(forward(l, x), ref) <= 1e-12);
      const auto norms = column_norms(w);
      for (std::size_t j = 0; j < norms.size(); ++j) CHECK(std::abs(norms[j] - l.mvec[j]) <= 1e-12);
    }
  }
  SECTION("shape mismatch and zero direction column") {
    auto l = init_layer(Matrix::identity(3), 1, 0);
    CHECK_THROWS_AS(forward(l, Matrix::zeros(2, 1)), ShapeError);
    // Make column 0 of W0 + IJ vanish.
    l.i_adapter = Matrix{{1.0}, {0.0}, {0.0}};
    l.j_adapter = Matrix{{-1.0, 0.0, 0.0}};
    CHECK_THROWS_AS(effective_weight(l), DegenerateInputError);
    CHECK_THROWS_AS(backward(l, Matrix::zeros(3, 1), Matrix::zeros(3, 1)), DegenerateInputError);
  }
}

TEST_CASE("backward closed-form cases", "[layers]") {
  SECTION("zero upstream gradient") {
    std::mt19937_64 rng(5);
    const auto l = random_state(5, 4, 2, rng);
    const auto g = backward(l, oracle::random_matrix(4, 3, rng), Matrix::zeros(5, 3));
    for (double v : g.d_mvec) CHECK(v == 0.0);
    CHECK(is_all_zero(g.d_i));
    CHECK(is_all_zero(g.d_j));
    CHECK(is_all_zero(g.d_input));
  }
  SECTION("radial direction is removed from dV") {
    const auto l = init_layer(Matrix::identity(2), 1, 0);
    const Matrix e1{{1.0}, {0.0}};
    const auto g = backward(l, e1, e1);
    CHECK(g.d_mvec == std::vector<double>{1.0, 0.0});
    // dV column 0 is zero, so both adapter gradients vanish for this input.
    CHECK(is_all_zero(g.d_i));
    CHECK(is_all_zero(g.d_j));
  }
  SECTION("shape errors") {
    const auto l = init_layer(Matrix::identity(3), 1, 0);
    CHECK_THROWS_AS(backward(l, Matrix::zeros(3, 2), Matrix::zeros(3, 1)), ShapeError);
    CHECK_THROWS_AS(backward(l, Matrix::zeros(2, 1), Matrix::zeros(3, 1)), ShapeError);
  }
}

TEST_CASE("backward agrees with central finite differences", "[layers][gradcheck]") {
  std::mt19937_64 rng(6);
  int configs = 0;
  for (std::size_t k = 2; k <= 10; k += 2) {
    for (std::size_t m = 2; m <= 10; m += 4) {
      const std::size_t r = 1 + (k + m) % std::min<std::size_t>({4, k, m});
      const auto l = random_state(k, m, r, rng);
      const Matrix x = oracle::random_matrix(m, 2, rng);
      const Matrix y = forward(l, x);
      const auto g = backward(l, x, y);

      // Independent finite differences written out against forward() only.
      const double h = 1e-6;
      auto fd = [&](auto mutate) {
        auto lp = l, lm = l;
        Matrix xp = x, xm = x;
        mutate(lp, xp, +h);
        mutate(lm, xm, -h);
        return (0.5 * frobenius_norm_sq(forward(lp, xp)) - 0.5 * frobenius_norm_sq(forward(lm, xm))) /
               (2.0 * h);
      };
      double worst = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double n = fd([&](auto& ll, auto&, double d) { ll.mvec[j] += d; });
        worst = std::max(worst, gradcheck_relative_error(g.d_mvec[j], n));
      }
      for (std::size_t i = 0; i < l.i_adapter.size(); ++i) {
        const double n = fd([&](auto& ll, auto&, double d) { ll.i_adapter.data()[i] += d; });
        worst = std::max(worst, gradcheck_relative_error(g.d_i.data()[i], n));
      }
      for (std::size_t i = 0; i < l.j_adapter.size(); ++i) {
        const double n = fd([&](auto& ll, auto&, double d) { ll.j_adapter.data()[i] += d; });
        worst = std::max(worst, gradcheck_relative_error(g.d_j.data()[i], n));
      }
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = fd([&](auto&, auto& xx, double d) { xx.data()[i] += d; });
        worst = std::max(worst, gradcheck_relative_error(g.d_input.data()[i], n));
      }
      CHECK(worst <= 1e-5);
      ++configs;
    }
  }
  CHECK(configs >= 15);

  const GradcheckResult res = run_gradcheck(20, 7);
  CHECK(res.trials == 20);
  CHECK(res.max_rel_error <= 1e-5);
}

TEST_CASE("magnitude and direction decouple", "[layers][property]") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 3 + trial % 6, m = 2 + trial % 5, r = 1 + trial % 2;
    auto l = random_state(k, m, r, rng);
    const Matrix x = oracle::random_matrix(m, 3, rng);
    const Matrix dy = oracle::random_matrix(k, 3, rng);

    // dV columns are orthogonal to v̂_j.
    {
      const auto g = backward(l, x, dy);
      const Matrix v = direction_matrix(l);
      const auto norms = column_norms(v);
      // dV is recovered from d_i = dV·Jᵀ only when J has full row rank, so
      // recompute it directly from the closed form instead.
      const Matrix gw = matmul_nt(dy, x);
      for (std::size_t j = 0; j < m; ++j) {
        double radial = 0.0;
        for (std::size_t i = 0; i < k; ++i) radial += v(i, j) / norms[j] * gw(i, j);
        CHECK(std::abs(radial - g.d_mvec[j]) <= 1e-12);
        double ortho = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          const double vhat = v(i, j) / norms[j];
          ortho += vhat * (l.mvec[j] / norms[j]) * (gw(i, j) - vhat * radial);
        }
        CHECK(std::abs(ortho) <= 1e-10);
      }
    }

    // Rescaling a direction column through the adapters leaves d_mvec unchanged.
    {
      const std::size_t j = trial % m;
      const double s = 0.5 + 0.25 * (trial % 7);
      // Put W0's column j inside range(I): w0_j = I·a.
      std::vector<double> a(r);
      for (auto& v : a) v = std::normal_distribution<double>(0.0, 1.0)(rng);
      for (std::size_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < r; ++p) acc += l.i_adapter(i, p) * a[p];
        l.w0(i, j) = acc;
      }
      const auto before = backward(l, x, dy);
      auto scaled = l;
      for (std::size_t p = 0; p < r; ++p) {
        scaled.j_adapter(p, j) = s * (a[p] + l.j_adapter(p, j)) - a[p];
      }
      const Matrix v0 = direction_matrix(l), v1 = direction_matrix(scaled);
      for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(v1(i, j) - s * v0(i, j)) <= 1e-12);
      const auto after = backward(scaled, x, dy);
      for (std::size_t c = 0; c < m; ++c) CHECK(std::abs(after.d_mvec[c] - before.d_mvec[c]) <= 1e-10);
    }
  }
}

TEST_CASE("detach_norm drops the radial projection", "[layers]") {
  std::mt19937_64 rng(9);
  auto l = random_state(5, 4, 2, rng);
  const Matrix x = oracle::random_matrix(4, 2, rng);
  const Matrix dy = oracle::random_matrix(5, 2, rng);
  const auto full = backward(l, x, dy);
  l.detach_norm = true;
  const auto detached = backward(l, x, dy);
  CHECK(full.d_mvec == detached.d_mvec);
  CHECK(max_abs_diff(full.d_input, detached.d_input) == 0.0);

  const Matrix v = direction_matrix(l);
  const auto norms = column_norms(v);
  Matrix dv = matmul_nt(dy, x);
  for (std::size_t i = 0; i < dv.rows(); ++i)
    for (std::size_t j = 0; j < dv.cols(); ++j) dv(i, j) *= l.mvec[j] / norms[j];
  CHECK(max_abs_diff(detached.d_i, matmul_nt(dv, l.j_adapter)) <= 1e-12);
  CHECK(max_abs_diff(detached.d_j, matmul_tn(l.i_adapter, dv)) <= 1e-12);
  // The adapter gradients differ from exact differentiation in general.
  CHECK(max_abs_diff(full.d_j, detached.d_j) > 1e-6);
}

TEST_CASE("merge", "[layers]") {
  std::mt19937_64 rng(10);
  const auto l = random_state(7, 5, 3, rng);
  const Matrix merged = merge(l);
  CHECK(merged.size() == 7u * 5u);
  const DenseLinear<double> dense{merged};
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Matrix x = oracle::random_matrix(5, 1, rng);
    worst = std::max(worst, max_abs_diff(forward(dense, x), forward(l, x)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("baseline layers", "[layers]") {
  std::mt19937_64 rng(11);
  const Matrix w0 = oracle::random_matrix(4, 3, rng);
  auto lora = init_lora_layer(w0, 2, 1);
  CHECK(max_abs_diff(effective_weight(lora), w0) == 0.0);
  lora.j_adapter = oracle::random_matrix(2, 3, rng);
  const Matrix x = oracle::random_matrix(3, 2, rng);
  const Matrix y = forward(lora, x);
  const auto g = backward(lora, x, y);
  const double h = 1e-6;
  for (std::size_t i = 0; i < lora.i_adapter.size(); ++i) {
    auto p = lora, m = lora;
    p.i_adapter.data()[i] += h;
    m.i_adapter.data()[i] -= h;
    const double n =
        (0.5 * frobenius_norm_sq(forward(p, x)) - 0.5 * frobenius_norm_sq(forward(m, x))) / (2 * h);
    CHECK(gradcheck_relative_error(g.d_i.data()[i], n) <= 1e-6);
  }
  const DenseLinear<double> dense{w0};
  const auto dg = backward(dense, x, forward(dense, x));
  CHECK(max_abs_diff(dg.d_w, matmul_nt(forward(dense, x), x)) == 0.0);
}
