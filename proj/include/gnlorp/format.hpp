// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <system_error>

namespace gnlorp {

/// Shortest decimal that parses back to the same double. Non-finite values
/// (undefined metrics) become the empty string so CSV cells stay blank.
inline std::string format_double(double v) {
  if (!std::isfinite(v)) return {};
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return res.ec == std::errc{} ? std::string(buf, res.ptr) : std::string{};
}

}  // namespace gnlorp
