// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "sparse_attn/rng.hpp"

namespace sparse_attn::cli {

namespace {

Tensor normal_tensor(Shape shape, double std, std::mt19937_64& rng) {
  std::size_t size = 1;
  for (auto d : shape) size *= d;
  std::normal_distribution<double> dist(0.0, std);
  std::vector<Scalar> data(size);
  for (auto& x : data) x = static_cast<Scalar>(dist(rng));
  return Tensor(std::move(shape), std::move(data));
}

template <typename Fn>
double time_ms(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

nlohmann::json BenchSample::to_json() const {
  return {{"impl", impl}, {"n", n}, {"d", d}, {"repeat", repeat}, {"ms", ms}, {"mac_count", mac_count}};
}

std::uint64_t dense_mac_count(std::size_t n, std::size_t heads, std::size_t qk_dim, std::size_t v_dim) {
  return static_cast<std::uint64_t>(heads) * n * n * (2 * qk_dim + v_dim);
}

BenchReport run_bench(const BenchOptions& options) {
  if (options.repeats == 0) throw ContractError("bench: repeats must be positive");
  const FactorizedPattern pattern = parse_pattern_spec(options.pattern);
  const auto n = static_cast<std::size_t>(pattern.length());
  const std::size_t d = options.width;

  AttentionParams params;
  params.n_heads = options.heads;
  AttentionParams::shapes(d, options.heads, false, params.qk_dim, params.v_dim);
  std::mt19937_64 rng(stream_seed(options.seed, "bench"));
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  params.w_q = normal_tensor({d, options.heads * params.qk_dim}, w_std, rng);
  params.w_k = normal_tensor({d, options.heads * params.qk_dim}, w_std, rng);
  params.w_v = normal_tensor({d, options.heads * params.v_dim}, w_std, rng);
  params.w_p = normal_tensor({options.heads * params.v_dim, d}, w_std, rng);
  params.validate(d);
  const Tensor x = normal_tensor({n, d}, 1.0, rng);

  const HeadAssignment assignment = apply_head_strategy(pattern, options.strategy, 0, options.heads);
  const HeadLayouts layouts = compile_head_layouts(assignment, options.block);

  BenchReport report;
  KernelCounters counters;
  Tensor sparse_out;
  {
    Tape tape(Tape::Mode::inference);
    sparse_out = sparse_attention(tape, x, params, layouts, &counters);
  }
  const std::uint64_t sparse_macs = counters.macs;
  const std::uint64_t dense_macs = dense_mac_count(n, options.heads, params.qk_dim, params.v_dim);

  std::vector<RowSets> rows;
  if (options.include_dense) {
    // Scores, probabilities and the transposed product of one head are alive together.
    const std::size_t bytes = 3 * n * n * sizeof(Scalar);
    if (bytes > options.dense_memory_limit)
      throw ContractError("bench: dense attention at n=" + std::to_string(n) + " needs about " +
                          std::to_string(bytes >> 20) + " MiB, above the limit");
    rows = head_rows(assignment);
    Tape tape(Tape::Mode::inference);
    const Tensor dense_out = dense_attention(tape, x, params, rows, n);
    double max_diff = 0, max_ref = 0;
    for (std::size_t k = 0; k < dense_out.size(); ++k) {
      max_diff = std::max(max_diff, std::abs(static_cast<double>(dense_out[k]) - sparse_out[k]));
      max_ref = std::max(max_ref, std::abs(static_cast<double>(dense_out[k])));
    }
    report.max_abs_diff = max_diff;
    report.tolerance = (sizeof(Scalar) == 4 ? 1e-4 : 1e-10) * std::max(1.0, max_ref);
    if (!(max_diff <= report.tolerance))
      throw NumericError("bench: sparse and dense outputs differ by " + std::to_string(max_diff) +
                         "; refusing to report timings");
  }

  for (std::size_t r = 0; r < options.repeats; ++r) {
    if (options.include_dense) {
      const double ms = time_ms([&] {
        Tape tape(Tape::Mode::inference);
        dense_attention(tape, x, params, rows, n);
      });
      report.samples.push_back({"dense", n, d, r, ms, dense_macs});
    }
    const double ms = time_ms([&] {
      Tape tape(Tape::Mode::inference);
      sparse_attention(tape, x, params, layouts);
    });
    report.samples.push_back({"sparse", n, d, r, ms, sparse_macs});
  }
  return report;
}

double median_ms(const BenchReport& report, const std::string& impl) {
  std::vector<double> ms;
  for (const auto& s : report.samples)
    if (s.impl == impl) ms.push_back(s.ms);
  if (ms.empty()) return 0;
  std::sort(ms.begin(), ms.end());
  return ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
}

}  // namespace sparse_attn::cli
