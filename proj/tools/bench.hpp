// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense-masked versus block-sparse attention timing.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparse_attn/attention.hpp"

namespace sparse_attn::cli {

struct BenchOptions {
  std::string pattern = "strided:1024:32";
  std::size_t width = 256;
  std::size_t heads = 1;
  HeadStrategy strategy = HeadStrategy::merged;
  std::int32_t block = kDefaultBlock;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  bool include_dense = true;
  /// Upper bound on the dense path's score buffers.
  std::size_t dense_memory_limit = std::size_t{3} << 30;
};

struct BenchSample {
  std::string impl;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t repeat = 0;
  double ms = 0;
  std::uint64_t mac_count = 0;

  nlohmann::json to_json() const;
};

struct BenchReport {
  std::vector<BenchSample> samples;
  /// max |sparse - dense| of the cross-check; negative when dense was skipped.
  double max_abs_diff = -1;
  double tolerance = 0;
};

/// MACs of dense attention: every (i, j) pair of every head.
std::uint64_t dense_mac_count(std::size_t n, std::size_t heads, std::size_t qk_dim, std::size_t v_dim);

/// Times forward attention `repeats` times per implementation. Throws
/// NumericError without timing anything when the cross-check fails.
BenchReport run_bench(const BenchOptions& options);

double median_ms(const BenchReport& report, const std::string& impl);

}  // namespace sparse_attn::cli
