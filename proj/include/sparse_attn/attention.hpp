// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-head causal attention: a dense reference composed from tape primitives
// and a block-sparse kernel driven by compiled layouts.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "sparse_attn/patterns.hpp"
#include "sparse_attn/tape.hpp"

namespace sparse_attn {

/// Projection weights of one attention layer. Head h uses columns
/// [h*qk_dim, (h+1)*qk_dim) of w_q/w_k and [h*v_dim, (h+1)*v_dim) of w_v.
struct AttentionParams {
  Tensor w_q;  // d x (n_heads * qk_dim)
  Tensor w_k;  // d x (n_heads * qk_dim)
  Tensor w_v;  // d x (n_heads * v_dim)
  Tensor w_p;  // (n_heads * v_dim) x d
  std::size_t n_heads = 1;
  std::size_t qk_dim = 0;
  std::size_t v_dim = 0;

  /// Shapes for width d. half_qk halves the query/key projection width.
  static void shapes(std::size_t d, std::size_t n_heads, bool half_qk, std::size_t& qk_dim, std::size_t& v_dim);
  void validate(std::size_t d) const;
};

enum class HeadStrategy { interleaved, merged, multihead };

std::string_view to_string(HeadStrategy strategy);
HeadStrategy parse_head_strategy(std::string_view name);

/// Connectivity used by each attention head of one layer.
struct HeadAssignment {
  /// Distinct single-head patterns.
  std::vector<FactorizedPattern> patterns;
  /// patterns[head_pattern[h]] is used by attention head h.
  std::vector<std::size_t> head_pattern;
  /// Factorized head feeding attention head h; -1 for a merged head.
  std::vector<int> factor_head;
};

/// interleaved: every head uses factorized head (layer mod p).
/// merged: every head uses the union of all factorized heads.
/// multihead: the first n_heads/p heads use factorized head 0, the next group
/// head 1, and so on. Within a group the summary residues of a fixed pattern
/// are split so that heads attend to distinct column subsets.
HeadAssignment apply_head_strategy(const FactorizedPattern& pattern, HeadStrategy strategy, std::size_t layer,
                                   std::size_t n_heads);

/// One compiled layout per attention head (shared between heads with the same pattern).
using HeadLayouts = std::vector<std::shared_ptr<const BlockSparseLayout>>;

HeadLayouts compile_head_layouts(const HeadAssignment& assignment, std::int32_t block = kDefaultBlock);
/// Materialized rows per attention head, for the dense path.
std::vector<RowSets> head_rows(const HeadAssignment& assignment);

inline constexpr std::size_t kDenseOracleLimit = 4096;

/// Reference attention built from matmul / masked_softmax. allowed[h] holds the
/// rows of head h.
Tensor dense_attention(Tape& tape, const Tensor& x, const AttentionParams& params, std::span<const RowSets> allowed,
                       std::size_t max_length = kDenseOracleLimit);

struct ScoreSample {
  std::uint32_t head;
  std::int32_t i;
  std::int32_t j;
  Scalar score;
};

/// Instrumentation filled by the block-sparse kernel (forward pass only).
struct KernelCounters {
  std::uint64_t pairs = 0;
  std::uint64_t macs = 0;
  /// Pairs visited with key index above the query index.
  std::uint64_t upper_touches = 0;
  bool record_scores = false;
  std::vector<ScoreSample> scores;
};

/// Per-head attention of q [n x H*dk], k [n x H*dk], v [n x H*dv] over the
/// layouts; returns [n x H*dv] with heads concatenated. Softmax statistics are
/// streamed per row (max pass, then exp/sum pass); backward recomputes the
/// probabilities from the saved row statistics.
Tensor block_sparse_attend(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, const HeadLayouts& layouts,
                           KernelCounters* counters = nullptr);

Tensor sparse_attention(Tape& tape, const Tensor& x, const AttentionParams& params, const HeadLayouts& layouts,
                        KernelCounters* counters = nullptr);

}  // namespace sparse_attn
