// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte accounting for weights, gradients, optimizer moments, projector bases
// and cached activations. The counting rules mirror what the optimizers in
// projection_optimizer.hpp actually allocate, so estimated element counts can
// be compared against a live run exactly.
//
// Categories:
//   params      every weight element, frozen or not, in the parameter dtype
//   grads       one element per trainable element
//   optimizer   Adam first and second moments (8-bit when quantized)
//   projector   SVD bases kept between refreshes, in the parameter dtype

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gnlorp/errors.hpp"
#include "gnlorp/projection_optimizer.hpp"
#include "gnlorp/quant8.hpp"

namespace gnlorp {

enum class Dtype { BF16, F32, F64 };

inline std::size_t dtype_bytes(Dtype d) {
  switch (d) {
    case Dtype::BF16: return 2;
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
  }
  return 0;
}

inline std::string_view to_string(Dtype d) {
  switch (d) {
    case Dtype::BF16: return "BF16";
    case Dtype::F32: return "F32";
    case Dtype::F64: return "F64";
  }
  return "?";
}

inline Dtype parse_dtype(std::string_view s) {
  for (Dtype d : {Dtype::BF16, Dtype::F32, Dtype::F64})
    if (s == to_string(d)) return d;
  throw ConfigError("unknown dtype '" + std::string(s) + "' (expected BF16, F32 or F64)");
}

struct LayerShape {
  std::size_t k = 0;  // output dim (rows)
  std::size_t m = 0;  // input dim (cols)
};

struct ArchSpec {
  std::vector<LayerShape> layers;
  std::size_t adapter_rank = 8;
  std::size_t proj_rank = 0;  // 0 follows adapter_rank
  ProjectionMode mode = ProjectionMode::Auto;
  // Embeddings, heads and other weights outside `layers`. Frozen unless the
  // method trains everything (FullAdam) or extra_trainable is set, in which
  // case they get dense Adam moments under every method.
  std::size_t extra_params = 0;
  bool extra_trainable = false;
};

struct ElementCounts {
  std::size_t params = 0;
  std::size_t trainable = 0;
  std::size_t grads = 0;
  std::size_t optimizer = 0;
  std::size_t projector = 0;
};

struct MemoryEstimate {
  Method method = Method::FullAdam;
  Dtype dtype = Dtype::BF16;
  bool quantize = false;
  ElementCounts counts;
  std::size_t param_bytes = 0;
  std::size_t grad_bytes = 0;
  std::size_t optimizer_bytes = 0;
  std::size_t projector_bytes = 0;
  std::size_t activation_bytes = 0;
  std::size_t total_bytes = 0;

  /// Weights plus optimizer moments: the quantity ranked across methods.
  std::size_t weights_and_states_bytes() const noexcept { return param_bytes + optimizer_bytes; }
  std::size_t weights_states_and_projectors_bytes() const noexcept {
    return param_bytes + optimizer_bytes + projector_bytes;
  }
};

inline void validate(const ArchSpec& a) {
  if (a.layers.empty()) throw ConfigError("arch: at least one layer is required");
  if (a.adapter_rank < 1) throw ConfigError("arch: adapter_rank must be >= 1");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& l = a.layers[i];
    if (l.k < 1 || l.m < 1) throw ConfigError("arch: layer " + std::to_string(i) + " has a zero dimension");
    const std::size_t lim = std::min(l.k, l.m);
    if (a.adapter_rank > lim) {
      throw ConfigError("arch: adapter_rank " + std::to_string(a.adapter_rank) + " exceeds min dim of layer " +
                        std::to_string(i));
    }
  }
}

namespace detail {

/// Moment tensors (each counted once; Adam keeps two of them) for one
/// parameter of shape rows x cols, with or without projection.
inline std::size_t moment_tensor_elements(std::size_t rows, std::size_t cols, bool projected,
                                          std::size_t proj_rank, ProjectionMode mode, AutoAxis axis,
                                          std::size_t* projector = nullptr) {
  if (!projected) return rows * cols;
  const ProjectionMode md = resolve_mode(rows, cols, mode, axis);
  const std::size_t c = std::min(proj_rank, max_projection_rank(rows, cols, md));
  const auto [pr, pc] = projected_shape(rows, cols, md, c);
  if (projector) {
    *projector += (md != ProjectionMode::RightOnly ? rows * c : 0) +
                  (md != ProjectionMode::LeftOnly ? cols * c : 0);
  }
  return pr * pc;
}

struct Accum {
  ElementCounts counts;
  std::vector<std::size_t> moment_tensors;  // element count of each moment tensor

  void trainable(std::size_t n) {
    counts.trainable += n;
    counts.grads += n;
  }
  void moments(std::size_t n) {
    moment_tensors.push_back(n);
    moment_tensors.push_back(n);
    counts.optimizer += 2 * n;
  }
};

}  // namespace detail

inline MemoryEstimate estimate_memory(const ArchSpec& arch, Method method, Dtype dtype, bool quantize) {
  validate(arch);
  const std::size_t r = arch.adapter_rank;
  const std::size_t c = arch.proj_rank == 0 ? r : arch.proj_rank;
  detail::Accum acc;
  for (const auto& l : arch.layers) {
    const std::size_t k = l.k, m = l.m;
    acc.counts.params += k * m;
    switch (method) {
      case Method::FullAdam:
        acc.trainable(k * m);
        acc.moments(k * m);
        break;
      case Method::GaloreAdam:
        acc.trainable(k * m);
        acc.moments(detail::moment_tensor_elements(k, m, true, c, arch.mode, AutoAxis::Shorter,
                                                   &acc.counts.projector));
        break;
      case Method::LoraAdam:
        acc.counts.params += r * (k + m);
        acc.trainable(r * (k + m));
        acc.moments(k * r);
        acc.moments(r * m);
        break;
      case Method::DoraAdam:
        acc.counts.params += r * (k + m) + m;
        acc.trainable(r * (k + m) + m);
        acc.moments(k * r);
        acc.moments(r * m);
        acc.moments(m);
        break;
      case Method::GradNormLoRP:
        acc.counts.params += r * (k + m) + m;
        acc.trainable(r * (k + m) + m);
        acc.moments(detail::moment_tensor_elements(k, r, true, c, arch.mode, AutoAxis::Longer,
                                                   &acc.counts.projector));
        acc.moments(detail::moment_tensor_elements(r, m, true, c, arch.mode, AutoAxis::Longer,
                                                   &acc.counts.projector));
        acc.moments(m);
        break;
    }
  }
  acc.counts.params += arch.extra_params;
  if (arch.extra_params > 0 && (method == Method::FullAdam || arch.extra_trainable)) {
    acc.trainable(arch.extra_params);
    acc.moments(arch.extra_params);
  }

  MemoryEstimate e;
  e.method = method;
  e.dtype = dtype;
  e.quantize = quantize;
  e.counts = acc.counts;
  const std::size_t b = dtype_bytes(dtype);
  e.param_bytes = e.counts.params * b;
  e.grad_bytes = e.counts.grads * b;
  e.projector_bytes = e.counts.projector * b;
  if (quantize) {
    for (std::size_t n : acc.moment_tensors) e.optimizer_bytes += quant8_bytes(n);
  } else {
    e.optimizer_bytes = e.counts.optimizer * b;
  }
  e.total_bytes = e.param_bytes + e.grad_bytes + e.optimizer_bytes + e.projector_bytes;
  return e;
}

/// Bytes of cached layer outputs: Σ over the first `depth_cached` layers of
/// out_dim · batch · dtype bytes. Every method caches the same activations,
/// which is why adapter methods barely move this number.
inline std::size_t activation_estimate(const ArchSpec& arch, std::size_t batch, std::size_t depth_cached,
                                       Dtype dtype = Dtype::F32) {
  if (batch < 1) throw RangeError("activation_estimate: batch must be >= 1");
  std::size_t n = 0;
  for (std::size_t i = 0; i < arch.layers.size() && i < depth_cached; ++i) n += arch.layers[i].k * batch;
  return n * dtype_bytes(dtype);
}

inline MemoryEstimate with_activations(MemoryEstimate e, std::size_t activation_bytes) {
  e.activation_bytes = activation_bytes;
  e.total_bytes += activation_bytes;
  return e;
}

/// Fractional reduction of `ours` relative to `reference` optimizer bytes.
inline double optimizer_reduction(const MemoryEstimate& ours, const MemoryEstimate& reference) {
  if (reference.optimizer_bytes == 0) throw DegenerateInputError("optimizer_reduction: empty reference");
  return 1.0 - double(ours.optimizer_bytes) / double(reference.optimizer_bytes);
}

// ---------------------------------------------------------------------------
// Reference architectures. Shapes are (out, in) per linear weight.

/// Encoder block stack with hidden 768 and FFN 3072, plus an embedding table.
inline ArchSpec roberta_base_like(std::size_t rank = 8) {
  ArchSpec a;
  for (int block = 0; block < 12; ++block) {
    for (int i = 0; i < 4; ++i) a.layers.push_back({768, 768});  // q, k, v, o
    a.layers.push_back({3072, 768});
    a.layers.push_back({768, 3072});
  }
  a.adapter_rank = rank;
  a.proj_rank = rank;
  a.extra_params = 50265u * 768u + 514u * 768u;  // token and position embeddings
  return a;
}

/// 32 decoder blocks, hidden 4096, gated FFN 11008, 32000-token vocabulary
/// with untied input and output embeddings trained alongside.
inline ArchSpec llama7b_like(std::size_t rank = 1024) {
  ArchSpec a;
  for (int block = 0; block < 32; ++block) {
    for (int i = 0; i < 4; ++i) a.layers.push_back({4096, 4096});
    a.layers.push_back({11008, 4096});  // gate
    a.layers.push_back({11008, 4096});  // up
    a.layers.push_back({4096, 11008});  // down
  }
  a.adapter_rank = rank;
  a.proj_rank = rank;
  a.extra_params = 2u * 32000u * 4096u;
  a.extra_trainable = true;
  return a;
}

}  // namespace gnlorp
