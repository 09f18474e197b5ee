// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "sparse_attn/attention.hpp"
#include "sparse_attn/gradcheck.hpp"
#include "test_util.hpp"

using namespace sparse_attn;
using sparse_attn::testing::random_attention_params;
using sparse_attn::testing::random_tensor;
using sparse_attn::testing::reference_attention;

namespace {

struct Grads {
  Tensor x, wq, wk, wv, wp;
};

/// Gradients of sum(out * weights) for either attention path.
template <typename Forward>
Grads reduction_grads(const Tensor& x, const AttentionParams& p, const Tensor& weights, Forward forward) {
  Tape tape;
  for (const auto* t : {&x, &p.w_q, &p.w_k, &p.w_v, &p.w_p}) tape.watch(*t);
  const Tensor out = forward(tape);
  const auto g = tape.backward(sum(tape, mul(tape, out, weights)));
  return {g.of(x), g.of(p.w_q), g.of(p.w_k), g.of(p.w_v), g.of(p.w_p)};
}

FactorizedPattern pattern_for(const std::string& kind, std::int32_t n) {
  const auto root = static_cast<std::int32_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  if (kind == "full") return full_pattern(n);
  if (kind == "strided") return strided_pattern(n, root);
  return fixed_pattern(n, std::max(2, root), 2);
}

}  // namespace

TEST_CASE("dense_attention matches the loop oracle") {
  std::mt19937_64 rng(11);
  const std::size_t n = 64, d = 16;
  const auto params = random_attention_params(d, 4, rng);
  const Tensor x = random_tensor({n, d}, rng);
  const auto assignment = apply_head_strategy(strided_pattern(64, 8), HeadStrategy::multihead, 0, 4);
  const auto rows = head_rows(assignment);
  Tape tape(Tape::Mode::inference);
  const Tensor dense = dense_attention(tape, x, params, rows);
  CHECK(max_abs_diff(dense, reference_attention(x, params, rows)) <= 1e-10);
}

TEST_CASE("single position reduces to the value and output projections") {
  std::mt19937_64 rng(3);
  const std::size_t d = 8;
  const auto params = random_attention_params(d, 2, rng);
  const Tensor x = random_tensor({1, d}, rng);
  Tape tape(Tape::Mode::inference);
  const Tensor expected = matmul(tape, matmul(tape, x, params.w_v), params.w_p);
  const auto layouts = compile_head_layouts(apply_head_strategy(full_pattern(1), HeadStrategy::merged, 0, 2));
  CHECK(max_abs_diff(sparse_attention(tape, x, params, layouts), expected) <= 1e-14);
  const std::vector<RowSets> rows(2, RowSets{{0}});
  CHECK(max_abs_diff(dense_attention(tape, x, params, rows), expected) <= 1e-14);
}

TEST_CASE("identical inputs attending only to themselves give identical outputs") {
  std::mt19937_64 rng(5);
  const std::int32_t n = 8;
  const std::size_t d = 8;
  Tensor x = random_tensor({static_cast<std::size_t>(n), d}, rng);
  auto data = x.mutable_data();
  for (std::size_t c = 0; c < d; ++c) data[5 * d + c] = data[2 * d + c];
  RowSets rows = full_pattern(n).materialize(0);
  rows[2] = {2};
  rows[5] = {5};
  const auto pattern = custom_pattern(n, {rows});
  const auto params = random_attention_params(d, 1, rng);
  Tape tape(Tape::Mode::inference);
  const Tensor out = sparse_attention(tape, x, params, {std::make_shared<const BlockSparseLayout>(compile_block_layout(pattern, 0, 4))});
  for (std::size_t c = 0; c < d; ++c) CHECK(out.at(2, c) == out.at(5, c));
}

TEST_CASE("sparse and dense attention agree across patterns, heads and strategies") {
  std::mt19937_64 rng(2024);
  for (const std::string kind : {"full", "strided", "fixed"}) {
    for (std::int32_t n : {16, 64}) {
      for (std::size_t heads : {1u, 2u, 4u}) {
        for (auto strategy : {HeadStrategy::interleaved, HeadStrategy::merged, HeadStrategy::multihead}) {
          const auto pattern = pattern_for(kind, n);
          if (strategy == HeadStrategy::multihead && heads % pattern.num_heads() != 0) continue;
          for (std::size_t layer : {0u, 1u}) {
            CAPTURE(kind);
            CAPTURE(n);
            CAPTURE(heads);
            CAPTURE(to_string(strategy));
            const std::size_t d = 16;
            const auto params = random_attention_params(d, heads, rng);
            const Tensor x = random_tensor({static_cast<std::size_t>(n), d}, rng);
            const Tensor w = random_tensor({static_cast<std::size_t>(n), d}, rng);
            const auto assignment = apply_head_strategy(pattern, strategy, layer, heads);
            const auto rows = head_rows(assignment);
            const auto layouts = compile_head_layouts(assignment, 8);
            const auto gs = reduction_grads(x, params, w, [&](Tape& t) { return sparse_attention(t, x, params, layouts); });
            const auto gd = reduction_grads(x, params, w, [&](Tape& t) { return dense_attention(t, x, params, rows); });
            Tape tape(Tape::Mode::inference);
            CHECK(max_abs_diff(sparse_attention(tape, x, params, layouts), dense_attention(tape, x, params, rows)) <= 1e-10);
            CHECK(max_abs_diff(gs.x, gd.x) <= 1e-8);
            CHECK(max_abs_diff(gs.wq, gd.wq) <= 1e-8);
            CHECK(max_abs_diff(gs.wk, gd.wk) <= 1e-8);
            CHECK(max_abs_diff(gs.wv, gd.wv) <= 1e-8);
            CHECK(max_abs_diff(gs.wp, gd.wp) <= 1e-8);
          }
        }
      }
    }
  }
}

TEST_CASE("half-size query/key projections") {
  std::mt19937_64 rng(17);
  const std::size_t n = 32, d = 16;
  const auto params = random_attention_params(d, 2, rng, true);
  CHECK(params.qk_dim == 4);
  CHECK(params.v_dim == 8);
  const Tensor x = random_tensor({n, d}, rng);
  const auto assignment = apply_head_strategy(fixed_pattern(32, 8, 2), HeadStrategy::multihead, 0, 2);
  Tape tape(Tape::Mode::inference);
  const Tensor sparse = sparse_attention(tape, x, params, compile_head_layouts(assignment));
  CHECK(max_abs_diff(sparse, reference_attention(x, params, head_rows(assignment))) <= 1e-10);
}

TEST_CASE("block-sparse attention gradient matches finite differences") {
  std::mt19937_64 rng(29);
  const std::size_t n = 12, d = 8;
  auto params = random_attention_params(d, 2, rng);
  const Tensor x = random_tensor({n, d}, rng);
  const Tensor w = random_tensor({n, d}, rng);
  const auto layouts = compile_head_layouts(apply_head_strategy(strided_pattern(12, 3), HeadStrategy::multihead, 0, 2), 2);
  const auto g = reduction_grads(x, params, w, [&](Tape& t) { return sparse_attention(t, x, params, layouts); });
  auto objective = [&](const Tensor& xx, const AttentionParams& pp) {
    Tape tape(Tape::Mode::inference);
    return sum(tape, mul(tape, sparse_attention(tape, xx, pp, layouts), w)).item();
  };
  CHECK(relative_error(g.x, finite_diff_grad([&](const Tensor& t) { return objective(t, params); }, x)) <= 1e-7);
  CHECK(relative_error(g.wk, finite_diff_grad([&](const Tensor& t) {
                         AttentionParams pp = params;
                         pp.w_k = t;
                         return objective(x, pp);
                       }, params.w_k)) <= 1e-7);
}

TEST_CASE("attention output is causal") {
  std::mt19937_64 rng(31);
  const std::size_t n = 32, d = 8;
  const auto params = random_attention_params(d, 2, rng);
  const Tensor x = random_tensor({n, d}, rng);
  const auto assignment = apply_head_strategy(strided_pattern(32, 6), HeadStrategy::multihead, 0, 2);
  const auto layouts = compile_head_layouts(assignment, 4);
  const auto rows = head_rows(assignment);
  for (int path = 0; path < 2; ++path) {
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        Tape tape;
        tape.watch(x);
        const Tensor out = path == 0 ? sparse_attention(tape, x, params, layouts) : dense_attention(tape, x, params, rows);
        Tensor seed = Tensor::zeros({n, d});
        seed.mutable_data()[i * d + c] = 1;
        const Tensor gx = tape.backward_from(out, seed).of(x);
        for (std::size_t j = i + 1; j < n; ++j)
          for (std::size_t e = 0; e < d; ++e) nonzero += gx.at(j, e) != 0;
      }
    CHECK(nonzero == 0);
  }
}

TEST_CASE("kernel never touches the upper triangle") {
  std::mt19937_64 rng(37);
  const std::size_t d = 8;
  for (const auto& pattern : {full_pattern(96), strided_pattern(96, 10), fixed_pattern(96, 8, 3), strided_pattern(96, 16)}) {
    for (auto strategy : {HeadStrategy::interleaved, HeadStrategy::merged, HeadStrategy::multihead}) {
      const auto params = random_attention_params(d, 2, rng);
      const Tensor x = random_tensor({96, d}, rng);
      const auto assignment = apply_head_strategy(pattern, strategy, 1, 2);
      KernelCounters counters;
      Tape tape(Tape::Mode::inference);
      sparse_attention(tape, x, params, compile_head_layouts(assignment, 16), &counters);
      CHECK(counters.upper_touches == 0);
      std::uint64_t expected = 0;
      for (const auto& rows : head_rows(assignment))
        for (const auto& r : rows) expected += r.size();
      CHECK(counters.pairs == expected);
    }
  }
}

TEST_CASE("scores equal the raw dot product divided by the root of the head width") {
  std::mt19937_64 rng(41);
  for (std::size_t d : {8u, 16u}) {
    const std::size_t n = 20;
    const auto params = random_attention_params(d, 2, rng);
    const Tensor x = random_tensor({n, d}, rng);
    Tape tape(Tape::Mode::inference);
    const Tensor q = matmul(tape, x, params.w_q);
    const Tensor k = matmul(tape, x, params.w_k);
    KernelCounters counters;
    counters.record_scores = true;
    sparse_attention(tape, x, params, compile_head_layouts(apply_head_strategy(strided_pattern(20, 5), HeadStrategy::merged, 0, 2)),
                     &counters);
    REQUIRE(!counters.scores.empty());
    const std::size_t dk = params.qk_dim;
    std::size_t mismatches = 0;
    for (const auto& s : counters.scores) {
      Scalar raw = 0;
      for (std::size_t c = 0; c < dk; ++c) raw += q.at(s.i, s.head * dk + c) * k.at(s.j, s.head * dk + c);
      mismatches += s.score != raw / std::sqrt(static_cast<Scalar>(dk));
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("identity output projection exposes the concatenated heads") {
  std::mt19937_64 rng(43);
  const std::size_t n = 24, d = 12;
  auto params = random_attention_params(d, 3, rng);
  const Tensor x = random_tensor({n, d}, rng);
  const auto layouts = compile_head_layouts(apply_head_strategy(fixed_pattern(24, 6, 2), HeadStrategy::merged, 0, 3));
  Tape tape(Tape::Mode::inference);
  const Tensor heads = block_sparse_attend(tape, matmul(tape, x, params.w_q), matmul(tape, x, params.w_k),
                                           matmul(tape, x, params.w_v), layouts);
  CHECK(bitwise_equal(matmul(tape, heads, params.w_p), sparse_attention(tape, x, params, layouts)));
  std::vector<Scalar> eye(d * d, 0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1;
  params.w_p = Tensor({d, d}, eye);
  CHECK(bitwise_equal(sparse_attention(tape, x, params, layouts), heads));
}

TEST_CASE("multiply-accumulate count tracks the attended pairs") {
  std::mt19937_64 rng(47);
  const std::int32_t n = 4096;
  const std::size_t d = 16;
  const auto pattern = strided_pattern(n, 64);
  const auto params = random_attention_params(d, 1, rng);
  const Tensor x = random_tensor({static_cast<std::size_t>(n), d}, rng);
  KernelCounters counters;
  Tape tape(Tape::Mode::inference);
  sparse_attention(tape, x, params, compile_head_layouts(apply_head_strategy(pattern, HeadStrategy::merged, 0, 1)), &counters);
  const auto stats = pattern_stats(pattern, false);
  const double bound = 4.0 * static_cast<double>(stats.total_pairs) * static_cast<double>(params.v_dim);
  MESSAGE("kernel macs " << counters.macs << ", budget " << bound);
  CHECK(counters.pairs == stats.total_pairs);
  CHECK(static_cast<double>(counters.macs) <= 1.1 * bound);
  const double dense = 4.0 * (static_cast<double>(n) * (n + 1) / 2) * static_cast<double>(params.v_dim);
  CHECK(dense / static_cast<double>(counters.macs) > 20.0);
}

TEST_CASE("head strategies") {
  const auto strided = strided_pattern(64, 8);
  SUBCASE("interleaved cycles through the factorized heads") {
    std::vector<int> seen;
    for (std::size_t r = 0; r < 4; ++r) seen.push_back(apply_head_strategy(strided, HeadStrategy::interleaved, r, 2).factor_head[0]);
    CHECK(seen == std::vector<int>{0, 1, 0, 1});
    const auto a = apply_head_strategy(strided, HeadStrategy::interleaved, 3, 2);
    CHECK(a.patterns.size() == 1);
    CHECK(a.patterns[0].materialize(0) == strided.materialize(1));
  }
  SUBCASE("merged uses the union for every layer") {
    for (std::size_t r = 0; r < 3; ++r) {
      const auto a = apply_head_strategy(strided, HeadStrategy::merged, r, 4);
      CHECK(a.factor_head == std::vector<int>(4, -1));
      CHECK(a.patterns[0].materialize(0) == strided.materialize_union());
    }
  }
  SUBCASE("multihead splits heads into factorized groups") {
    const auto a = apply_head_strategy(strided, HeadStrategy::multihead, 0, 8);
    CHECK(a.factor_head == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1});
    CHECK(a.patterns[a.head_pattern[0]].materialize(0) == strided.materialize(0));
    CHECK(a.patterns[a.head_pattern[7]].materialize(0) == strided.materialize(1));
    CHECK_THROWS_AS(apply_head_strategy(strided, HeadStrategy::multihead, 0, 3), ContractError);
  }
  SUBCASE("multihead summary heads attend to distinct column subsets") {
    for (std::int32_t c : {1, 2, 3, 4, 8}) {
      const auto fixed = fixed_pattern(64, 8, c);
      for (std::size_t heads : {2u, 4u, 8u}) {
        CAPTURE(c);
        CAPTURE(heads);
        const auto a = apply_head_strategy(fixed, HeadStrategy::multihead, 0, heads);
        const std::size_t g = heads / 2;
        std::set<std::int32_t> columns;
        std::size_t listed = 0;
        for (std::size_t h = g; h < heads; ++h) {
          const auto& rule = a.patterns[a.head_pattern[h]].head(0).rules[0];
          listed += rule.residues.size();
          columns.insert(rule.residues.begin(), rule.residues.end());
        }
        CHECK(columns.size() == static_cast<std::size_t>(c));
        CHECK(*columns.begin() == 8 - c);
        if (static_cast<std::size_t>(c) >= g) CHECK(listed == static_cast<std::size_t>(c));
        // The union over the group is the original summary head.
        for (std::int32_t i = 0; i < 64; ++i)
          for (std::int32_t j = 0; j <= i; ++j) {
            bool any = false;
            for (std::size_t h = g; h < heads; ++h) any = any || a.patterns[a.head_pattern[h]].contains(0, i, j);
            if (any != fixed.contains(1, i, j)) FAIL("group union differs at " << i << "," << j);
          }
      }
    }
  }
}

TEST_CASE("attention errors") {
  std::mt19937_64 rng(53);
  const auto params = random_attention_params(8, 2, rng);
  const Tensor x = random_tensor({16, 8}, rng);
  Tape tape(Tape::Mode::inference);
  const auto layouts = compile_head_layouts(apply_head_strategy(full_pattern(8), HeadStrategy::merged, 0, 2));
  CHECK_THROWS_AS(sparse_attention(tape, x, params, layouts), ContractError);
  CHECK_THROWS_AS(sparse_attention(tape, random_tensor({16, 6}, rng), params, layouts), DimensionError);
  const std::vector<RowSets> rows(2, full_pattern(16).materialize(0));
  CHECK_THROWS_AS(dense_attention(tape, x, params, rows, 8), ContractError);
  std::size_t qk = 0, v = 0;
  CHECK_THROWS_AS(AttentionParams::shapes(10, 4, false, qk, v), DimensionError);
  CHECK_THROWS_AS(parse_head_strategy("bogus"), ContractError);
}
