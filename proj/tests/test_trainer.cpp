// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gnlorp/trainer.hpp"
#include "oracles.hpp"

using namespace gnlorp;

namespace {

ModelConfig two_layer(std::size_t in, std::size_t hidden, std::size_t out, std::size_t r,
                      Nonlinearity nl = Nonlinearity::Tanh, Head head = Head::SquaredError) {
  ModelConfig c;
  c.layer_dims = {{in, hidden}, {hidden, out}};
  c.adapter_rank = r;
  c.nonlinearity = nl;
  c.head = head;
  c.seed = 11;
  return c;
}

Dataset regression(std::size_t in, std::size_t out, std::size_t n, std::uint64_t seed, double noise = 0.01) {
  DataConfig dc;
  dc.dims = {in, out};
  dc.n = n;
  dc.seed = seed;
  dc.noise = noise;
  return gen_synthetic(dc);
}

RunConfig steps(std::int64_t n, std::int64_t every = 1) {
  RunConfig r;
  r.steps = n;
  r.record_every = every;
  return r;
}

}  // namespace

TEST_CASE("build_model", "[trainer]") {
  std::mt19937_64 rng(3);
  SECTION("single Identity layer computes W0 x at init") {
    ModelConfig c;
    c.layer_dims = {{5, 3}};
    c.adapter_rank = 2;
    c.nonlinearity = Nonlinearity::Identity;
    for (Method m : kAllMethods) {
      const auto model = build_model<double>(c, m);
      const Matrix x = oracle::random_matrix(5, 7, rng);
      const Matrix w0 = std::visit(
          [](const auto& l) -> Matrix {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, DenseLinear<double>>) return l.w;
            else return l.w0;
          },
          model.layers[0]);
      CHECK(max_abs_diff(predict(model, x), oracle::from_dense(oracle::naive_matmul(oracle::to_dense(w0), oracle::to_dense(x)))) <= 1e-12);
    }
  }
  SECTION("frozen weights have std close to 1/sqrt(in)") {
    ModelConfig c;
    c.layer_dims = {{400, 300}};
    c.adapter_rank = 1;
    const auto model = build_model<double>(c, Method::FullAdam);
    const auto& w = std::get<DenseLinear<double>>(model.layers[0]).w;
    const double sd = frobenius_norm(w) / std::sqrt(double(w.size()));
    CHECK(std::abs(sd - 1.0 / 20.0) <= 0.002);
  }
  SECTION("same seed gives bitwise identical parameters") {
    const auto c = two_layer(6, 5, 4, 2);
    const auto a = build_model<double>(c);
    const auto b = build_model<double>(c);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& la = std::get<NormalizedLowRankLinear<double>>(a.layers[i]);
      const auto& lb = std::get<NormalizedLowRankLinear<double>>(b.layers[i]);
      CHECK(la.w0 == lb.w0);
      CHECK(la.i_adapter == lb.i_adapter);
      CHECK(la.j_adapter == lb.j_adapter);
      CHECK(la.mvec == lb.mvec);
    }
  }
  SECTION("3-layer ReLU forward matches manual composition") {
    ModelConfig c;
    c.layer_dims = {{6, 5}, {5, 4}, {4, 3}};
    c.adapter_rank = 2;
    c.nonlinearity = Nonlinearity::ReLU;
    c.seed = 5;
    auto model = build_model<double>(c);
    // Nonzero J so every adapter term contributes.
    for (auto& l : model.layers) {
      auto& n = std::get<NormalizedLowRankLinear<double>>(l);
      n.j_adapter = oracle::random_matrix(n.j_adapter.rows(), n.j_adapter.cols(), rng, 0.5);
    }
    const Matrix x = oracle::random_matrix(6, 9, rng);
    auto h = oracle::to_dense(x);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto w = oracle::to_dense(effective_weight(std::get<NormalizedLowRankLinear<double>>(model.layers[i])));
      h = oracle::naive_matmul(w, h);
      if (i < 2)
        for (auto& row : h)
          for (auto& v : row) v = std::max(v, 0.0);
    }
    CHECK(max_abs_diff(predict(model, x), oracle::from_dense(h)) <= 1e-12);
  }
  SECTION("dimension checks") {
    ModelConfig c;
    c.layer_dims = {{6, 5}, {4, 3}};
    c.adapter_rank = 1;
    CHECK_THROWS_AS(build_model<double>(c), ConfigError);
    c.layer_dims = {};
    CHECK_THROWS_AS(build_model<double>(c), ConfigError);
    c.layer_dims = {{6, 2}};
    c.adapter_rank = 3;
    CHECK_THROWS_AS(build_model<double>(c), ConfigError);
    CHECK_THROWS_AS(parse_nonlinearity("GELU"), ConfigError);
  }
}

TEST_CASE("gen_synthetic", "[trainer][data]") {
  SECTION("noise 0 gives exact linear targets") {
    const auto d = regression(7, 3, 50, 4, 0.0);
    // Recover W* by least squares on the noiseless data and check the fit is exact.
    const auto x = oracle::to_dense(d.inputs);
    const auto y = oracle::to_dense(d.targets);
    const auto xt = oracle::naive_transpose(x);
    const auto gram = oracle::naive_matmul(x, xt);
    const auto rhs = oracle::naive_matmul(y, xt);
    // W* = rhs · gram⁻¹, via the eigen decomposition of the Gram matrix.
    const auto eg = oracle::symmetric_eigen(gram);
    std::vector<std::vector<double>> inv(7, std::vector<double>(7, 0.0));
    for (std::size_t a = 0; a < 7; ++a)
      for (std::size_t b = 0; b < 7; ++b)
        for (std::size_t k = 0; k < 7; ++k) inv[a][b] += eg.vectors[k][a] * eg.vectors[k][b] / eg.values[k];
    const auto w = oracle::naive_matmul(rhs, inv);
    CHECK(max_abs_diff(oracle::from_dense(oracle::naive_matmul(w, x)), d.targets) <= 1e-10);
  }
  SECTION("same seed gives identical data") {
    const auto a = regression(4, 2, 30, 8);
    const auto b = regression(4, 2, 30, 8);
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    CHECK_FALSE(regression(4, 2, 30, 9).inputs == a.inputs);
  }
  SECTION("least-squares probe separates the clusters") {
    DataConfig dc;
    dc.kind = DatasetKind::SyntheticClassification;
    dc.dims = {10, 5};
    dc.n = 400;
    dc.seed = 2;
    const auto d = gen_synthetic(dc);
    CHECK(d.classes == 5);
    // One-hot regression with a bias row, solved through the normal equations.
    const std::size_t f = 11;
    std::vector<std::vector<double>> x(f, std::vector<double>(d.size(), 1.0));
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < d.size(); ++j) x[i][j] = d.inputs(i, j);
    std::vector<std::vector<double>> y(d.classes, std::vector<double>(d.size(), 0.0));
    for (std::size_t j = 0; j < d.size(); ++j) y[d.labels[j]][j] = 1.0;
    const auto xt = oracle::naive_transpose(x);
    const auto eg = oracle::symmetric_eigen(oracle::naive_matmul(x, xt));
    std::vector<std::vector<double>> inv(f, std::vector<double>(f, 0.0));
    for (std::size_t a = 0; a < f; ++a)
      for (std::size_t b = 0; b < f; ++b)
        for (std::size_t k = 0; k < f; ++k) inv[a][b] += eg.vectors[k][a] * eg.vectors[k][b] / eg.values[k];
    const auto w = oracle::naive_matmul(oracle::naive_matmul(y, xt), inv);
    const auto s = oracle::naive_matmul(w, x);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < d.classes; ++c)
        if (s[c][j] > s[best][j]) best = c;
      hits += best == d.labels[j];
    }
    CHECK(double(hits) / double(d.size()) >= 0.95);
  }
  SECTION("CharLM pairs") {
    DataConfig dc;
    dc.kind = DatasetKind::CharLM;
    dc.n = 100000;
    const auto d = gen_synthetic(dc);
    const std::string text = read_text_file(default_text_path());
    REQUIRE(d.size() == text.size() - 1);
    CHECK(text.size() <= 100 * 1024);
    for (std::size_t j = 0; j < d.size(); ++j) {
      CHECK(d.vocab[d.labels[j]] == text[j + 1]);
      CHECK(d.inputs(d.vocab.find(text[j]), j) == 1.0);
    }
    CHECK(frobenius_norm_sq(d.inputs) == double(d.size()));
  }
  SECTION("errors") {
    DataConfig dc;
    dc.kind = DatasetKind::CharLM;
    dc.text_path = "/nonexistent/gnlorp.txt";
    CHECK_THROWS_AS(gen_synthetic(dc), IoError);
    dc.kind = DatasetKind::SyntheticRegression;
    dc.n = 0;
    CHECK_THROWS_AS(gen_synthetic(dc), ConfigError);
    dc.n = 4;
    dc.dims = {3};
    CHECK_THROWS_AS(gen_synthetic(dc), ConfigError);
    CHECK_THROWS_AS(parse_dataset_kind("MNIST"), ConfigError);
  }
}

TEST_CASE("softmax loss gradient matches finite differences", "[trainer]") {
  std::mt19937_64 rng(9);
  Dataset d;
  d.kind = DatasetKind::SyntheticClassification;
  d.classes = 4;
  d.labels = {0, 3, 1, 1, 2};
  d.inputs = Matrix(1, 5);
  const Matrix y = oracle::random_matrix(4, 5, rng, 2.0);
  const auto lg = loss_and_grad(Head::Softmax, y, d);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      Matrix yp = y, ym = y;
      yp(i, j) += h;
      ym(i, j) -= h;
      const double fd = (loss_and_grad(Head::Softmax, yp, d).loss - loss_and_grad(Head::Softmax, ym, d).loss) / (2 * h);
      CHECK(std::abs(fd - lg.dy(i, j)) <= 1e-8);
    }
  }
}

TEST_CASE("end-to-end gradient matches finite differences", "[trainer]") {
  std::mt19937_64 rng(21);
  const auto data = regression(5, 3, 12, 1);
  for (Nonlinearity nl : {Nonlinearity::Tanh, Nonlinearity::Identity}) {
    auto model = build_model<double>(two_layer(5, 4, 3, 2, nl));
    for (auto& l : model.layers) {
      auto& n = std::get<NormalizedLowRankLinear<double>>(l);
      n.j_adapter = oracle::random_matrix(n.j_adapter.rows(), n.j_adapter.cols(), rng, 0.5);
    }
    const auto fp = forward_pass(model, data.inputs);
    const auto grads = backward_pass(model, fp, loss_and_grad(Head::SquaredError, fp.output, data).dy);
    const auto loss_at = [&](const Model<double>& m) {
      return loss_and_grad(Head::SquaredError, predict(m, data.inputs), data).loss;
    };
    const double h = 1e-6;
    for (std::size_t li = 0; li < 2; ++li) {
      const auto& g = std::get<LayerGradients<double>>(grads[li]);
      auto& layer = std::get<NormalizedLowRankLinear<double>>(model.layers[li]);
      for (auto* which : {&layer.i_adapter, &layer.j_adapter}) {
        const Matrix& want = which == &layer.i_adapter ? g.d_i : g.d_j;
        for (std::size_t e = 0; e < which->size(); ++e) {
          const double keep = which->data()[e];
          which->data()[e] = keep + h;
          const double lp = loss_at(model);
          which->data()[e] = keep - h;
          const double lm = loss_at(model);
          which->data()[e] = keep;
          CHECK(std::abs((lp - lm) / (2 * h) - want.data()[e]) <= 1e-7);
        }
      }
    }
  }
}

TEST_CASE("lr = 0 keeps the loss constant", "[trainer]") {
  const auto data = regression(6, 4, 32, 3);
  for (Method m : kAllMethods) {
    OptimizerConfig oc;
    oc.method = m;
    oc.lr = 0.0;
    const auto r = train<double>(two_layer(6, 5, 4, 2), data, oc, steps(30)).report;
    REQUIRE(r.records.size() == 30);
    for (const auto& rec : r.records) CHECK(rec.loss == r.records.front().loss);
  }
}

TEST_CASE("full-rank projection reproduces the unprojected run", "[trainer]") {
  // proj_rank at the full axis length, scale 1, refresh every step.
  const auto data = regression(6, 4, 40, 5);
  const auto mc = two_layer(6, 5, 4, 3);
  OptimizerConfig oc;
  oc.scale = 1.0;
  oc.update_freq = 1;
  oc.proj_rank = 6;
  oc.method = Method::DoraAdam;
  const auto ref = train<double>(mc, data, oc, steps(200)).report;
  oc.method = Method::GradNormLoRP;
  const auto gnl = train<double>(mc, data, oc, steps(200)).report;
  REQUIRE(ref.records.size() == gnl.records.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.records.size(); ++i)
    worst = std::max(worst, std::abs(ref.records[i].loss - gnl.records[i].loss));
  CHECK(worst <= 1e-8);
  CHECK(gnl.records.back().loss < 0.5 * gnl.records.front().loss);
}

TEST_CASE("merged model evaluates like the adapter model", "[trainer][property]") {
  const auto data = regression(6, 4, 40, 6);
  for (Method m : kAllMethods) {
    OptimizerConfig oc;
    oc.method = m;
    oc.update_freq = 20;
    auto res = train<double>(two_layer(6, 5, 4, 2), data, oc, steps(60, 10));
    const auto merged = merged_model(res.model);
    CHECK(std::abs(evaluate(merged, data).loss - evaluate(res.model, data).loss) <= 1e-10);
    CHECK(max_abs_diff(predict(merged, data.inputs), predict(res.model, data.inputs)) <= 1e-10);
  }
}

TEST_CASE("identical config gives identical records", "[trainer][property]") {
  const auto data = regression(6, 4, 40, 7);
  OptimizerConfig oc;
  oc.update_freq = 10;
  oc.quantize = true;
  RunConfig rc = steps(50, 5);
  rc.batch_size = 16;
  const auto a = train<double>(two_layer(6, 5, 4, 2), data, oc, rc).report;
  const auto b = train<double>(two_layer(6, 5, 4, 2), data, oc, rc).report;
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].loss == b.records[i].loss);
    CHECK(a.records[i].grad_norm_i == b.records[i].grad_norm_i);
    CHECK(a.records[i].refresh == b.records[i].refresh);
  }
  CHECK(a.refresh_steps == b.refresh_steps);
}

TEST_CASE("records, refreshes and logged stable ranks", "[trainer][property]") {
  const auto data = regression(8, 4, 40, 8);
  OptimizerConfig oc;
  oc.update_freq = 25;
  const auto r = train<double>(two_layer(8, 6, 4, 3), data, oc, steps(100, 7)).report;
  // t = 0, 7, …, 98 plus the last step.
  CHECK(r.records.size() == 16);
  CHECK(r.records.back().step == 99);
  CHECK(r.refresh_steps == std::vector<std::int64_t>{0, 25, 50, 75});
  CHECK(r.max_orthonormality_error <= 1e-8);
  for (const auto& rec : r.records) {
    CHECK(rec.refresh == (rec.step % 25 == 0));
    CHECK(rec.mem_bytes_est > 0);
    // I is 6x3 and J is 3x8 on the first layer.
    if (!std::isnan(rec.stable_rank_zi)) {
      CHECK(rec.stable_rank_zi >= 1.0 - 1e-12);
      CHECK(rec.stable_rank_zi <= 3.0 + 1e-12);
    }
    REQUIRE_FALSE(std::isnan(rec.stable_rank_hj));
    CHECK(rec.stable_rank_hj >= 1.0 - 1e-12);
    CHECK(rec.stable_rank_hj <= 3.0 + 1e-12);
  }
  // J starts at zero, so the I gradient vanishes at t = 0.
  CHECK(std::isnan(r.records.front().stable_rank_zi));
  CHECK(r.records.front().grad_norm_i == 0.0);
}

TEST_CASE("estimated state, projectors and activations match the run", "[trainer][audit]") {
  const auto data = regression(9, 5, 30, 9);
  auto mc = two_layer(9, 7, 5, 3);
  mc.layer_dims.insert(mc.layer_dims.begin() + 1, LayerDims{7, 7});
  for (Method m : kAllMethods) {
    for (bool q : {false, true}) {
      OptimizerConfig oc;
      oc.method = m;
      oc.quantize = q;
      oc.proj_rank = 2;
      RunConfig rc = steps(3);
      rc.batch_size = 10;
      const auto r = train<double>(mc, data, oc, rc).report;
      CHECK(r.optimizer_state_elements == r.estimated_state_elements);
      CHECK(r.optimizer_state_bytes == r.estimated_state_bytes);
      CHECK(r.projector_elements == r.estimated_projector_elements);
      CHECK(r.peak_cached_activations * sizeof(double) == r.estimated_activation_bytes);
      CHECK(r.peak_cached_activations == (7 + 7 + 5) * 10);
    }
  }
}

TEST_CASE("evaluate", "[trainer]") {
  SECTION("uniform softmax gives perplexity near the class count") {
    DataConfig dc;
    dc.kind = DatasetKind::SyntheticClassification;
    dc.dims = {6, 20};
    dc.n = 1000;
    const auto d = gen_synthetic(dc);
    ModelConfig c;
    c.layer_dims = {{6, 20}};
    c.adapter_rank = 1;
    c.head = Head::Softmax;
    auto model = build_model<double>(c, Method::FullAdam);
    std::get<DenseLinear<double>>(model.layers[0]).w = Matrix(20, 6);
    const double ppl = std::exp(evaluate(model, d).loss);
    CHECK(std::abs(ppl - 20.0) <= 0.05 * 20.0);
  }
  SECTION("zero-loss regression fit") {
    ModelConfig c;
    c.layer_dims = {{4, 3}};
    c.adapter_rank = 1;
    c.nonlinearity = Nonlinearity::Identity;
    const auto model = build_model<double>(c, Method::FullAdam);
    Dataset d;
    d.kind = DatasetKind::SyntheticRegression;
    std::mt19937_64 rng(1);
    d.inputs = oracle::random_matrix(4, 10, rng);
    d.targets = predict(model, d.inputs);
    CHECK(evaluate(model, d).loss == 0.0);
    CHECK(std::isnan(evaluate(model, d).accuracy));
  }
  SECTION("perplexity is exp of the mean loss") {
    DataConfig dc;
    dc.kind = DatasetKind::CharLM;
    dc.n = 300;
    const auto d = gen_synthetic(dc);
    ModelConfig c = two_layer(0, 12, 0, 4, Nonlinearity::Tanh, Head::Softmax);
    c = resolve_dims(c, d);
    OptimizerConfig oc;
    const auto res = train<double>(c, d, oc, steps(20, 5));
    const auto m = evaluate(res.model, d);
    CHECK(std::abs(m.perplexity - std::exp(m.loss)) <= 1e-12 * m.perplexity);
    CHECK(m.accuracy >= 0.0);
  }
  SECTION("head and data kind must agree") {
    const auto model = build_model<double>(two_layer(4, 3, 2, 1, Nonlinearity::Tanh, Head::Softmax));
    const auto d = regression(4, 2, 5, 0);
    CHECK_THROWS_AS(evaluate(model, d), ConfigError);
    CHECK_THROWS_AS(train<double>(two_layer(4, 3, 2, 1, Nonlinearity::Tanh, Head::Softmax), d, {}, steps(1)),
                    ConfigError);
  }
}

TEST_CASE("divergence reports the step", "[trainer]") {
  const auto data = regression(4, 3, 20, 1, 0.0);
  OptimizerConfig oc;
  oc.method = Method::FullAdam;
  oc.lr = 1e300;
  try {
    (void)train<double>(two_layer(4, 4, 3, 1, Nonlinearity::Identity), data, oc, steps(50));
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 1);
    CHECK(e.step() < 50);
  }
}

TEST_CASE("F32 training tracks F64", "[trainer]") {
  const auto data = regression(6, 4, 32, 2);
  OptimizerConfig oc;
  oc.update_freq = 20;
  const auto a = train<double>(two_layer(6, 5, 4, 2), data, oc, steps(100, 10)).report;
  const auto b = train<float>(two_layer(6, 5, 4, 2), data, oc, steps(100, 10)).report;
  CHECK(std::abs(a.final_metrics.loss - b.final_metrics.loss) <= 1e-3 * std::max(1.0, a.final_metrics.loss));
}
