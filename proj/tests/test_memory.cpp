// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gnlorp/gradcheck.hpp"
#include "gnlorp/memory_model.hpp"
#include "oracles.hpp"

using namespace gnlorp;

namespace {

ArchSpec single(std::size_t k, std::size_t m, std::size_t r, std::size_t c, ProjectionMode mode) {
  ArchSpec a;
  a.layers = {{k, m}};
  a.adapter_rank = r;
  a.proj_rank = c;
  a.mode = mode;
  return a;
}

}  // namespace

TEST_CASE("single 4x4 layer counts", "[memory]") {
  SECTION("FullAdam F32") {
    const auto e = estimate_memory(single(4, 4, 1, 1, ProjectionMode::Auto), Method::FullAdam, Dtype::F32, false);
    CHECK(e.param_bytes == 64);
    CHECK(e.grad_bytes == 64);
    CHECK(e.optimizer_bytes == 128);
    CHECK(e.projector_bytes == 0);
    CHECK(e.total_bytes == 256);
  }
  SECTION("GradNormLoRP r=c=2, Auto") {
    const auto e = estimate_memory(single(4, 4, 2, 2, ProjectionMode::Auto), Method::GradNormLoRP, Dtype::F32, false);
    CHECK(e.counts.trainable == 4 + 8 + 8);
    CHECK(e.counts.params == 16 + 20);
    // I (4x2) keeps a 2x2 compact gradient, J (2x4) a 2x2 one, mvec is dense.
    CHECK(e.counts.optimizer == 2 * (2 * 2 + 2 * 2) + 2 * 4);
    CHECK(e.counts.projector == 4 * 2 + 4 * 2);
    CHECK(e.optimizer_bytes == 24 * 4);
    CHECK(e.total_bytes == e.param_bytes + e.grad_bytes + e.optimizer_bytes + e.projector_bytes);
  }
  SECTION("GradNormLoRP r=c=2, LeftOnly everywhere") {
    const auto e = estimate_memory(single(4, 4, 2, 2, ProjectionMode::LeftOnly), Method::GradNormLoRP, Dtype::F32, false);
    // J is only 2 rows tall, so LeftOnly at c=2 does not compress it.
    CHECK(e.counts.optimizer == 2 * (2 * 2) + 2 * (2 * 4) + 2 * 4);
    CHECK(e.counts.projector == 4 * 2 + 2 * 2);
  }
  SECTION("unknown dtype string") { CHECK_THROWS_AS(parse_dtype("F16"), ConfigError); }
  SECTION("invalid arch") {
    CHECK_THROWS_AS(estimate_memory(ArchSpec{}, Method::FullAdam, Dtype::F32, false), ConfigError);
    CHECK_THROWS_AS(estimate_memory(single(4, 3, 4, 4, ProjectionMode::Auto), Method::LoraAdam, Dtype::F32, false),
                    ConfigError);
  }
}

TEST_CASE("estimated state sizes equal allocated optimizer state", "[memory][audit]") {
  std::mt19937_64 rng(1);
  const std::vector<LayerShape> shapes{{12, 5}, {5, 9}, {7, 7}, {3, 10}};
  for (bool quantize : {false, true}) {
    for (ProjectionMode mode : {ProjectionMode::Auto, ProjectionMode::LeftOnly, ProjectionMode::RightOnly,
                                ProjectionMode::TwoSided}) {
      for (std::size_t c : {1u, 2u, 3u}) {
        ArchSpec arch;
        arch.layers = shapes;
        arch.adapter_rank = 3;
        arch.proj_rank = c;
        arch.mode = mode;
        OptimizerConfig cfg;
        cfg.proj_rank = c;
        cfg.mode = mode;
        cfg.quantize = quantize;

        cfg.method = Method::GradNormLoRP;
        std::size_t elems = 0, bytes = 0, proj = 0;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
          const auto layer = random_layer_state(shapes[i].k, shapes[i].m, 3, rng);
          NormalizedLayerOptimizer<double> opt(layer, cfg, i);
          elems += opt.state_elements();
          bytes += opt.state_bytes();
          proj += opt.projector_elements();
        }
        auto e = estimate_memory(arch, Method::GradNormLoRP, Dtype::F64, quantize);
        CHECK(e.counts.optimizer == elems);
        CHECK(e.optimizer_bytes == bytes);
        CHECK(e.counts.projector == proj);

        cfg.method = Method::GaloreAdam;
        elems = bytes = proj = 0;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
          DenseLinear<double> layer{oracle::random_matrix(shapes[i].k, shapes[i].m, rng)};
          DenseLayerOptimizer<double> opt(layer, cfg, 3, i);
          elems += opt.state_elements();
          bytes += opt.state_bytes();
          proj += opt.projector_elements();
        }
        e = estimate_memory(arch, Method::GaloreAdam, Dtype::F64, quantize);
        CHECK(e.counts.optimizer == elems);
        CHECK(e.optimizer_bytes == bytes);
        CHECK(e.counts.projector == proj);
      }
    }
  }
}

TEST_CASE("8-bit state overhead", "[memory][quant8]") {
  for (std::size_t n : {1u, 255u, 256u, 257u, 1000u, 65536u}) {
    ArchSpec arch;
    arch.layers = {{n, 1}};
    arch.adapter_rank = 1;
    const auto f32 = estimate_memory(arch, Method::FullAdam, Dtype::F32, false);
    const auto q8 = estimate_memory(arch, Method::FullAdam, Dtype::F32, true);
    const std::size_t blocks = (n + 255) / 256;
    CHECK(f32.optimizer_bytes == 2 * 4 * n);
    CHECK(q8.optimizer_bytes == 2 * (n + 4 * blocks));
    // A quarter of the dense bytes, plus four bytes of scale per block.
    CHECK(q8.optimizer_bytes == f32.optimizer_bytes / 4 + 2 * 4 * blocks);
  }
}

TEST_CASE("activation_estimate", "[memory]") {
  const auto one = single(4, 3, 1, 1, ProjectionMode::Auto);
  CHECK(activation_estimate(one, 1, 1, Dtype::F32) == 16);
  for (std::size_t b : {1u, 3u, 17u}) {
    CHECK(activation_estimate(one, 2 * b, 1) == 2 * activation_estimate(one, b, 1));
  }
  ArchSpec mlp;
  mlp.layers = {{6, 4}, {5, 6}, {2, 5}};
  CHECK(activation_estimate(mlp, 10, 3, Dtype::F64) == (6 + 5 + 2) * 10 * 8);
  CHECK(activation_estimate(mlp, 10, 2, Dtype::F64) == (6 + 5) * 10 * 8);
  CHECK_THROWS_AS(activation_estimate(mlp, 0, 3), RangeError);
}

TEST_CASE("method ordering on a RoBERTa-base-like stack", "[memory]") {
  const ArchSpec arch = roberta_base_like(8);
  auto bytes = [&](Method m) { return estimate_memory(arch, m, Dtype::BF16, false).weights_and_states_bytes(); };
  CHECK(bytes(Method::GradNormLoRP) < bytes(Method::GaloreAdam));
  CHECK(bytes(Method::GaloreAdam) < bytes(Method::LoraAdam));
  CHECK(bytes(Method::LoraAdam) < bytes(Method::DoraAdam));
  CHECK(bytes(Method::DoraAdam) < bytes(Method::FullAdam));
  // Full Adam keeps two moments per weight.
  const auto full = estimate_memory(arch, Method::FullAdam, Dtype::BF16, false);
  CHECK(full.optimizer_bytes == 2 * full.param_bytes);
}

TEST_CASE("7B-shape optimizer reduction", "[memory]") {
  const ArchSpec arch = llama7b_like(1024);
  const auto full = estimate_memory(arch, Method::FullAdam, Dtype::BF16, false);
  const auto ours = estimate_memory(arch, Method::GradNormLoRP, Dtype::BF16, true);
  const double red = optimizer_reduction(ours, full);
  CHECK(red >= 0.75);
  CHECK(red <= 0.95);
}
