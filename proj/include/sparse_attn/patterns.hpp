// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Factorized attention connectivity patterns.
//
// A pattern has one or more heads. Each head is a union of closed-form rules
// plus the query position itself, so rows are produced on demand and nothing
// of size n^2 is ever stored. All indices are 0-based.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sparse_attn/ops.hpp"

namespace sparse_attn {

enum class PatternKind { strided, fixed, full, local_only, custom };

std::string_view to_string(PatternKind kind);

/// One closed-form membership rule. Every rule only admits j <= i.
struct HeadRule {
  enum class Kind {
    causal,      // j <= i
    window,      // i - stride <= j <= i
    residue,     // (i - j) mod stride == 0
    same_block,  // floor(j / stride) == floor(i / stride)
    summary,     // j mod stride in residues
    explicit_rows,
  };

  Kind kind = Kind::causal;
  std::int32_t stride = 0;
  std::vector<std::int32_t> residues;          // summary only, sorted
  std::shared_ptr<const RowSets> rows;         // explicit_rows only

  bool contains(std::int32_t i, std::int32_t j) const;
  /// Append the rule's members for query i in increasing order.
  void append_row(std::int32_t i, IndexList& out) const;
};

struct PatternHead {
  std::vector<HeadRule> rules;
};

class FactorizedPattern {
 public:
  FactorizedPattern(PatternKind kind, std::int32_t n, std::int32_t stride, std::int32_t summary_width,
                    std::vector<PatternHead> heads);

  PatternKind kind() const { return kind_; }
  std::int32_t length() const { return n_; }
  std::int32_t stride() const { return stride_; }
  std::int32_t summary_width() const { return summary_; }
  std::size_t num_heads() const { return heads_.size(); }
  const PatternHead& head(std::size_t m) const { return heads_.at(m); }

  bool contains(std::size_t m, std::int32_t i, std::int32_t j) const;
  bool union_contains(std::int32_t i, std::int32_t j) const;

  /// Sorted A_i^(m), always containing i.
  IndexList row(std::size_t m, std::int32_t i) const;
  /// Sorted union over heads.
  IndexList union_row(std::int32_t i) const;

  RowSets materialize(std::size_t m) const;
  RowSets materialize_union() const;

 private:
  PatternKind kind_;
  std::int32_t n_;
  std::int32_t stride_;
  std::int32_t summary_;
  std::vector<PatternHead> heads_;
};

/// A_i^(1) = {max(0, i-l) .. i}, A_i^(2) = {j <= i : (i - j) mod l == 0}.
FactorizedPattern strided_pattern(std::int32_t n, std::int32_t stride);
/// A_i^(1) = current length-l block, A_i^(2) = {j <= i : j mod l >= l - c} plus i.
FactorizedPattern fixed_pattern(std::int32_t n, std::int32_t stride, std::int32_t summary_width);
FactorizedPattern full_pattern(std::int32_t n);
/// Only the local-window head of the strided pattern.
FactorizedPattern local_only_pattern(std::int32_t n, std::int32_t stride);
/// Arbitrary heads given as explicit rows; each row is clipped to j <= i check
/// and self-inclusion is added.
FactorizedPattern custom_pattern(std::int32_t n, std::vector<RowSets> heads);

/// Single head attending to the union of all heads.
FactorizedPattern merge_heads(const FactorizedPattern& pattern);
/// Pattern consisting of head m only.
FactorizedPattern select_head(const FactorizedPattern& pattern, std::size_t m);

/// Parse "kind:n[:l[:c]]" as used on the command line. Kinds: strided, fixed,
/// full, local.
FactorizedPattern parse_pattern_spec(std::string_view spec);

struct ValidityReport {
  bool valid = false;
  std::size_t p_used = 0;
  /// First unreachable (j, i) pair in (i, j) lexicographic order.
  std::optional<std::pair<std::int32_t, std::int32_t>> witness;
  /// Longest shortest path over all j < i; nullopt when some pair is never connected.
  std::optional<std::size_t> max_path_length;
  /// Two-head patterns only: every j <= i reached as j in A_a^(1), a in A_i^(2).
  std::optional<bool> ordered_valid;
};

/// Checks that every j < i is reachable from i within p_allowed attention steps
/// over the union of all heads.
ValidityReport verify_validity(const FactorizedPattern& pattern, std::size_t p_allowed);

struct PatternStats {
  std::uint64_t total_pairs = 0;
  std::size_t max_row_size = 0;
  std::vector<std::uint32_t> pairs_per_position;
};

/// Exact counts of the union pattern by row enumeration.
PatternStats pattern_stats(const FactorizedPattern& pattern, bool with_curve = true);

// ---------------------------------------------------------------------------
// Block-sparse layouts
// ---------------------------------------------------------------------------

enum class LayoutStrategy { local_window, strided_transpose, fixed_columns, gather_fallback };

std::string_view to_string(LayoutStrategy strategy);

/// One dense sub-block. Bit q of row_bits[p] marks local pair (rb*b + p, cb*b + q).
struct LayoutBlock {
  std::int32_t row_block = 0;
  std::int32_t col_block = 0;
  std::vector<std::uint64_t> row_bits;
};

/// A group of blocks in a local coordinate system. row_order / col_order map
/// local indices to sequence positions; both are increasing within every
/// attended pair so elision in local coordinates implies elision globally.
struct LayoutPart {
  LayoutStrategy strategy = LayoutStrategy::gather_fallback;
  std::vector<std::int32_t> row_order;
  std::vector<std::int32_t> col_order;
  std::vector<LayoutBlock> blocks;
  // gather_fallback: CSR over global rows.
  std::vector<std::size_t> row_offsets;
  std::vector<std::int32_t> gather_cols;

  bool gathered() const { return strategy == LayoutStrategy::gather_fallback; }
};

class BlockSparseLayout {
 public:
  BlockSparseLayout(std::int32_t n, std::int32_t block, std::vector<LayoutPart> parts);

  std::int32_t length() const { return n_; }
  std::int32_t block() const { return block_; }
  LayoutStrategy strategy() const { return parts_.front().strategy; }
  const std::vector<LayoutPart>& parts() const { return parts_; }

  std::size_t block_count() const;
  std::uint64_t pair_count() const;

  /// Calls visit(i, j) for every covered pair, part by part.
  template <typename Visit>
  void for_each_pair(Visit&& visit) const {
    const auto b = static_cast<std::size_t>(block_);
    for (const auto& part : parts_) {
      if (part.gathered()) {
        for (std::size_t i = 0; i + 1 < part.row_offsets.size(); ++i)
          for (std::size_t k = part.row_offsets[i]; k < part.row_offsets[i + 1]; ++k)
            visit(static_cast<std::int32_t>(i), part.gather_cols[k]);
        continue;
      }
      for (const auto& blk : part.blocks) {
        for (std::size_t p = 0; p < b; ++p) {
          std::uint64_t bits = blk.row_bits[p];
          while (bits) {
            const int q = __builtin_ctzll(bits);
            bits &= bits - 1;
            visit(part.row_order[blk.row_block * b + p], part.col_order[blk.col_block * b + static_cast<std::size_t>(q)]);
          }
        }
      }
    }
  }

  /// Global covered rows, sorted. Used by the coverage audit.
  RowSets covered_rows() const;

 private:
  std::int32_t n_;
  std::int32_t block_;
  std::vector<LayoutPart> parts_;
};

inline constexpr std::int32_t kDefaultBlock = 32;

/// Compile head m of `pattern` into blocks of side `block` (1..64).
BlockSparseLayout compile_block_layout(const FactorizedPattern& pattern, std::size_t head,
                                       std::int32_t block = kDefaultBlock);

/// True iff the layout covers exactly the pairs of head m.
bool layout_matches(const BlockSparseLayout& layout, const FactorizedPattern& pattern, std::size_t head);

/// P2 graymap of the n x n connectivity: 255 attended, 0 masked. head < 0
/// renders the union of all heads.
void render_pattern(const FactorizedPattern& pattern, const std::filesystem::path& path, int head = -1);
void render_layout(const BlockSparseLayout& layout, const std::filesystem::path& path);

}  // namespace sparse_attn
