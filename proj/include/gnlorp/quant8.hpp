// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Block-wise 8-bit storage for optimizer moments. Each block of up to 256
// values keeps one float scale (its absmax) and int8 codes in [-127, 127]:
//
//     code = round(127 · x / absmax),   x' = code · absmax / 127
//
// QuantRounding::Up rounds magnitudes away from zero instead, so |x'| ≥ |x|
// and a nonzero value never decodes to zero. Its error bound is absmax/127
// rather than absmax/254.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gnlorp/errors.hpp"

namespace gnlorp {

inline constexpr std::size_t kQuantBlock = 256;
inline constexpr std::size_t kQuantScaleBytes = sizeof(float);

enum class QuantRounding { Nearest, Up };

struct Quant8Block {
  std::array<std::int8_t, kQuantBlock> codes{};
  std::uint16_t length = 0;
  float absmax = 0.0f;
};

template <typename T>
Quant8Block quantize_block(std::span<const T> x, QuantRounding rounding = QuantRounding::Nearest) {
  if (x.size() > kQuantBlock) {
    throw RangeError("quantize_block: block of " + std::to_string(x.size()) + " values");
  }
  Quant8Block b;
  b.length = static_cast<std::uint16_t>(x.size());
  double amax = 0.0;
  for (T v : x) amax = std::max(amax, std::abs(static_cast<double>(v)));
  b.absmax = static_cast<float>(amax);
  if (b.absmax == 0.0f) return b;
  const double scale = 127.0 / static_cast<double>(b.absmax);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double y = static_cast<double>(x[i]) * scale;
    const double q = rounding == QuantRounding::Nearest ? std::nearbyint(y) : std::copysign(std::ceil(std::abs(y)), y);
    b.codes[i] = static_cast<std::int8_t>(std::clamp(q, -127.0, 127.0));
  }
  return b;
}

template <typename T>
void dequantize_block(const Quant8Block& b, std::span<T> out) {
  if (out.size() != b.length) throw ShapeError("dequantize_block: output length");
  const double a = static_cast<double>(b.absmax);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(b.codes[i]) * a / 127.0);
  }
}

inline std::vector<double> dequantize_block(const Quant8Block& b) {
  std::vector<double> out(b.length);
  dequantize_block<double>(b, out);
  return out;
}

inline std::size_t quant8_block_count(std::size_t n) {
  return (n + kQuantBlock - 1) / kQuantBlock;
}

/// Bytes held by an n-element quantized tensor: one code per value plus one
/// scale per block.
inline std::size_t quant8_bytes(std::size_t n) {
  return n + quant8_block_count(n) * kQuantScaleBytes;
}

/// A flat tensor stored as consecutive 8-bit blocks.
class Quant8Tensor {
 public:
  Quant8Tensor() = default;
  explicit Quant8Tensor(std::size_t n) : size_(n), blocks_(quant8_block_count(n)) {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      blocks_[b].length = static_cast<std::uint16_t>(std::min(kQuantBlock, n - b * kQuantBlock));
    }
  }

  template <typename T>
  void store(std::span<const T> values, QuantRounding rounding = QuantRounding::Nearest) {
    if (values.size() != size_) throw ShapeError("Quant8Tensor::store: length mismatch");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const std::size_t lo = b * kQuantBlock;
      blocks_[b] = quantize_block(values.subspan(lo, std::min(kQuantBlock, size_ - lo)), rounding);
    }
  }

  template <typename T>
  void load(std::span<T> out) const {
    if (out.size() != size_) throw ShapeError("Quant8Tensor::load: length mismatch");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const std::size_t lo = b * kQuantBlock;
      dequantize_block(blocks_[b], out.subspan(lo, blocks_[b].length));
    }
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t bytes() const noexcept { return quant8_bytes(size_); }
  const std::vector<Quant8Block>& blocks() const noexcept { return blocks_; }

 private:
  std::size_t size_ = 0;
  std::vector<Quant8Block> blocks_;
};

}  // namespace gnlorp
