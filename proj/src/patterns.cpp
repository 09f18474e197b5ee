// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>

namespace sparse_attn {

std::string_view to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::strided: return "strided";
    case PatternKind::fixed: return "fixed";
    case PatternKind::full: return "full";
    case PatternKind::local_only: return "local_only";
    case PatternKind::custom: return "custom";
  }
  return "?";
}

std::string_view to_string(LayoutStrategy strategy) {
  switch (strategy) {
    case LayoutStrategy::local_window: return "local_window";
    case LayoutStrategy::strided_transpose: return "strided_transpose";
    case LayoutStrategy::fixed_columns: return "fixed_columns";
    case LayoutStrategy::gather_fallback: return "gather_fallback";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Rules
// ---------------------------------------------------------------------------

bool HeadRule::contains(std::int32_t i, std::int32_t j) const {
  if (j < 0 || j > i) return false;
  switch (kind) {
    case Kind::causal: return true;
    case Kind::window: return j >= i - stride;
    case Kind::residue: return (i - j) % stride == 0;
    case Kind::same_block: return j / stride == i / stride;
    case Kind::summary: return std::binary_search(residues.begin(), residues.end(), j % stride);
    case Kind::explicit_rows: {
      const auto& r = (*rows)[static_cast<std::size_t>(i)];
      return std::binary_search(r.begin(), r.end(), j);
    }
  }
  return false;
}

void HeadRule::append_row(std::int32_t i, IndexList& out) const {
  switch (kind) {
    case Kind::causal:
      for (std::int32_t j = 0; j <= i; ++j) out.push_back(j);
      break;
    case Kind::window:
      for (std::int32_t j = std::max(0, i - stride); j <= i; ++j) out.push_back(j);
      break;
    case Kind::residue:
      for (std::int32_t j = i % stride; j <= i; j += stride) out.push_back(j);
      break;
    case Kind::same_block:
      for (std::int32_t j = (i / stride) * stride; j <= i; ++j) out.push_back(j);
      break;
    case Kind::summary:
      for (std::int32_t base = 0; base <= i; base += stride)
        for (auto r : residues) {
          if (base + r > i) break;
          out.push_back(base + r);
        }
      break;
    case Kind::explicit_rows: {
      const auto& r = (*rows)[static_cast<std::size_t>(i)];
      out.insert(out.end(), r.begin(), r.end());
      break;
    }
  }
}

namespace {

bool always_contains_self(const HeadRule& rule) {
  return rule.kind != HeadRule::Kind::summary && rule.kind != HeadRule::Kind::explicit_rows;
}

HeadRule make_rule(HeadRule::Kind kind, std::int32_t stride) {
  HeadRule r;
  r.kind = kind;
  r.stride = stride;
  return r;
}

void collect_row(const PatternHead& head, std::int32_t i, IndexList& out) {
  if (head.rules.size() == 1 && always_contains_self(head.rules[0])) {
    head.rules[0].append_row(i, out);
    return;
  }
  const std::size_t start = out.size();
  for (const auto& rule : head.rules) rule.append_row(i, out);
  out.push_back(i);
  std::sort(out.begin() + static_cast<std::ptrdiff_t>(start), out.end());
  out.erase(std::unique(out.begin() + static_cast<std::ptrdiff_t>(start), out.end()), out.end());
}

}  // namespace

// ---------------------------------------------------------------------------
// Patterns
// ---------------------------------------------------------------------------

FactorizedPattern::FactorizedPattern(PatternKind kind, std::int32_t n, std::int32_t stride,
                                     std::int32_t summary_width, std::vector<PatternHead> heads)
    : kind_(kind), n_(n), stride_(stride), summary_(summary_width), heads_(std::move(heads)) {
  if (n_ < 1) throw ContractError("pattern length must be positive");
  if (heads_.empty()) throw ContractError("pattern needs at least one head");
}

bool FactorizedPattern::contains(std::size_t m, std::int32_t i, std::int32_t j) const {
  if (j == i) return true;
  const auto& rules = head(m).rules;
  return std::any_of(rules.begin(), rules.end(), [&](const HeadRule& r) { return r.contains(i, j); });
}

bool FactorizedPattern::union_contains(std::int32_t i, std::int32_t j) const {
  for (std::size_t m = 0; m < heads_.size(); ++m)
    if (contains(m, i, j)) return true;
  return false;
}

IndexList FactorizedPattern::row(std::size_t m, std::int32_t i) const {
  if (i < 0 || i >= n_) throw ContractError("pattern row out of range");
  IndexList out;
  collect_row(head(m), i, out);
  return out;
}

IndexList FactorizedPattern::union_row(std::int32_t i) const {
  if (heads_.size() == 1) return row(0, i);
  IndexList out;
  for (const auto& h : heads_)
    for (const auto& rule : h.rules) rule.append_row(i, out);
  out.push_back(i);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

RowSets FactorizedPattern::materialize(std::size_t m) const {
  RowSets rows(static_cast<std::size_t>(n_));
  for (std::int32_t i = 0; i < n_; ++i) rows[static_cast<std::size_t>(i)] = row(m, i);
  return rows;
}

RowSets FactorizedPattern::materialize_union() const {
  RowSets rows(static_cast<std::size_t>(n_));
  for (std::int32_t i = 0; i < n_; ++i) rows[static_cast<std::size_t>(i)] = union_row(i);
  return rows;
}

FactorizedPattern strided_pattern(std::int32_t n, std::int32_t stride) {
  if (stride < 1 || stride > n) throw ContractError("strided pattern needs 1 <= l <= n");
  std::vector<PatternHead> heads(2);
  heads[0].rules.push_back(make_rule(HeadRule::Kind::window, stride));
  heads[1].rules.push_back(make_rule(HeadRule::Kind::residue, stride));
  return FactorizedPattern(PatternKind::strided, n, stride, 0, std::move(heads));
}

FactorizedPattern fixed_pattern(std::int32_t n, std::int32_t stride, std::int32_t summary_width) {
  if (stride < 1 || stride > n) throw ContractError("fixed pattern needs 1 <= l <= n");
  if (summary_width < 1 || summary_width > stride) throw ContractError("fixed pattern needs 1 <= c <= l");
  std::vector<PatternHead> heads(2);
  heads[0].rules.push_back(make_rule(HeadRule::Kind::same_block, stride));
  HeadRule summary = make_rule(HeadRule::Kind::summary, stride);
  for (std::int32_t r = stride - summary_width; r < stride; ++r) summary.residues.push_back(r);
  heads[1].rules.push_back(std::move(summary));
  return FactorizedPattern(PatternKind::fixed, n, stride, summary_width, std::move(heads));
}

FactorizedPattern full_pattern(std::int32_t n) {
  std::vector<PatternHead> heads(1);
  heads[0].rules.push_back(make_rule(HeadRule::Kind::causal, 0));
  return FactorizedPattern(PatternKind::full, n, n, 0, std::move(heads));
}

FactorizedPattern local_only_pattern(std::int32_t n, std::int32_t stride) {
  if (stride < 1 || stride > n) throw ContractError("local pattern needs 1 <= l <= n");
  std::vector<PatternHead> heads(1);
  heads[0].rules.push_back(make_rule(HeadRule::Kind::window, stride));
  return FactorizedPattern(PatternKind::local_only, n, stride, 0, std::move(heads));
}

FactorizedPattern custom_pattern(std::int32_t n, std::vector<RowSets> head_rows) {
  std::vector<PatternHead> heads;
  for (auto& rows : head_rows) {
    if (rows.size() != static_cast<std::size_t>(n)) throw ContractError("custom pattern: need one row per position");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto& r = rows[i];
      std::sort(r.begin(), r.end());
      r.erase(std::unique(r.begin(), r.end()), r.end());
      if (!r.empty() && (r.front() < 0 || r.back() > static_cast<std::int32_t>(i))) {
        throw ContractError("custom pattern: row " + std::to_string(i) + " attends outside {0..i}");
      }
    }
    HeadRule rule;
    rule.kind = HeadRule::Kind::explicit_rows;
    rule.rows = std::make_shared<const RowSets>(std::move(rows));
    heads.push_back(PatternHead{{std::move(rule)}});
  }
  return FactorizedPattern(PatternKind::custom, n, 0, 0, std::move(heads));
}

FactorizedPattern merge_heads(const FactorizedPattern& pattern) {
  if (pattern.num_heads() == 1) return pattern;
  PatternHead merged;
  for (std::size_t m = 0; m < pattern.num_heads(); ++m)
    for (const auto& rule : pattern.head(m).rules) merged.rules.push_back(rule);
  return FactorizedPattern(PatternKind::custom, pattern.length(), pattern.stride(), pattern.summary_width(),
                           {std::move(merged)});
}

FactorizedPattern select_head(const FactorizedPattern& pattern, std::size_t m) {
  if (pattern.num_heads() == 1 && m == 0) return pattern;
  return FactorizedPattern(PatternKind::custom, pattern.length(), pattern.stride(), pattern.summary_width(),
                           {pattern.head(m)});
}

namespace {

std::int32_t parse_int(std::string_view text, std::string_view spec) {
  std::int32_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ContractError("malformed pattern spec '" + std::string(spec) + "'");
  }
  return value;
}

}  // namespace

FactorizedPattern parse_pattern_spec(std::string_view spec) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto colon = spec.find(':', start);
    fields.push_back(spec.substr(start, colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (fields.size() < 2) throw ContractError("malformed pattern spec '" + std::string(spec) + "', expected kind:n[:l[:c]]");
  const auto kind = fields[0];
  const auto n = parse_int(fields[1], spec);
  auto stride_or_default = [&] {
    if (fields.size() >= 3) return parse_int(fields[2], spec);
    return static_cast<std::int32_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  };
  if (kind == "full") {
    if (fields.size() != 2) throw ContractError("full pattern takes only n");
    return full_pattern(n);
  }
  if (kind == "strided" && fields.size() <= 3) return strided_pattern(n, stride_or_default());
  if (kind == "local" && fields.size() <= 3) return local_only_pattern(n, stride_or_default());
  if (kind == "fixed" && fields.size() == 4) return fixed_pattern(n, parse_int(fields[2], spec), parse_int(fields[3], spec));
  throw ContractError("malformed pattern spec '" + std::string(spec) + "'");
}

// ---------------------------------------------------------------------------
// Validity
// ---------------------------------------------------------------------------

namespace {

class BitRows {
 public:
  BitRows(std::size_t n) : n_(n), words_((n + 63) / 64), bits_(n * words_, 0) {}
  std::uint64_t* row(std::size_t i) { return bits_.data() + i * words_; }
  const std::uint64_t* row(std::size_t i) const { return bits_.data() + i * words_; }
  void set(std::size_t i, std::size_t j) { row(i)[j / 64] |= 1ULL << (j % 64); }
  bool test(std::size_t i, std::size_t j) const { return (row(i)[j / 64] >> (j % 64)) & 1ULL; }
  void or_into(std::size_t dst, const BitRows& src, std::size_t src_row) {
    const auto* s = src.row(src_row);
    auto* d = row(dst);
    for (std::size_t w = 0; w <= src_row / 64; ++w) d[w] |= s[w];  // src_row's bits never exceed src_row
  }
  /// True iff bits 0..i are all set in row i.
  bool prefix_full(std::size_t i) const {
    const auto* r = row(i);
    const std::size_t full_words = (i + 1) / 64;
    for (std::size_t w = 0; w < full_words; ++w)
      if (r[w] != ~0ULL) return false;
    const std::size_t rem = (i + 1) % 64;
    if (rem == 0) return true;
    const std::uint64_t mask = (1ULL << rem) - 1;
    return (r[full_words] & mask) == mask;
  }
  std::size_t first_missing(std::size_t i) const {
    for (std::size_t j = 0; j <= i; ++j)
      if (!test(i, j)) return j;
    return i + 1;
  }
  bool operator==(const BitRows& other) const { return bits_ == other.bits_; }

 private:
  std::size_t n_;
  std::size_t words_;
  std::vector<std::uint64_t> bits_;
};

constexpr std::size_t kMaxValidityLength = 1 << 14;

}  // namespace

ValidityReport verify_validity(const FactorizedPattern& pattern, std::size_t p_allowed) {
  const auto n = static_cast<std::size_t>(pattern.length());
  if (n > kMaxValidityLength) throw ContractError("verify_validity: n too large for exhaustive check");

  std::vector<IndexList> adjacency(n);
  for (std::size_t i = 0; i < n; ++i) adjacency[i] = pattern.union_row(static_cast<std::int32_t>(i));

  ValidityReport report;
  report.p_used = p_allowed;

  // reach holds positions reachable from i within k steps (always including i).
  BitRows reach(n);
  for (std::size_t i = 0; i < n; ++i) reach.set(i, i);
  auto all_connected = [&](const BitRows& r) {
    for (std::size_t i = 0; i < n; ++i)
      if (!r.prefix_full(i)) return false;
    return true;
  };

  std::size_t k = 0;
  bool stalled = false;
  bool decided = false;
  if (all_connected(reach)) report.max_path_length = 0;
  while (true) {
    // Once everything is connected or reach stops growing, later steps add nothing.
    const bool final_for_p = k == p_allowed || (k < p_allowed && (stalled || report.max_path_length));
    if (!decided && final_for_p) {
      decided = true;
      report.valid = true;
      for (std::size_t i = 0; i < n && !report.witness; ++i) {
        const auto j = reach.first_missing(i);
        if (j <= i) {
          report.valid = false;
          report.witness = std::make_pair(static_cast<std::int32_t>(j), static_cast<std::int32_t>(i));
        }
      }
    }
    if (decided && (report.max_path_length || stalled)) break;
    BitRows next(n);
    for (std::size_t i = 0; i < n; ++i) {
      next.set(i, i);
      for (auto a : adjacency[i]) next.or_into(i, reach, static_cast<std::size_t>(a));
    }
    ++k;
    stalled = next == reach;
    reach = std::move(next);
    if (!report.max_path_length && all_connected(reach)) report.max_path_length = k;
  }

  if (pattern.num_heads() == 2) {
    BitRows first(n);
    for (std::size_t a = 0; a < n; ++a)
      for (auto j : pattern.row(0, static_cast<std::int32_t>(a))) first.set(a, static_cast<std::size_t>(j));
    BitRows ordered(n);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      for (auto a : pattern.row(1, static_cast<std::int32_t>(i))) ordered.or_into(i, first, static_cast<std::size_t>(a));
      ok = ordered.prefix_full(i);
    }
    report.ordered_valid = ok;
  }
  return report;
}

PatternStats pattern_stats(const FactorizedPattern& pattern, bool with_curve) {
  PatternStats stats;
  const auto n = pattern.length();
  if (with_curve) stats.pairs_per_position.reserve(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) {
    const std::size_t size = pattern.union_row(i).size();
    stats.total_pairs += size;
    stats.max_row_size = std::max(stats.max_row_size, size);
    if (with_curve) stats.pairs_per_position.push_back(static_cast<std::uint32_t>(size));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Layouts
// ---------------------------------------------------------------------------

BlockSparseLayout::BlockSparseLayout(std::int32_t n, std::int32_t block, std::vector<LayoutPart> parts)
    : n_(n), block_(block), parts_(std::move(parts)) {
  if (parts_.empty()) throw ContractError("layout needs at least one part");
}

std::size_t BlockSparseLayout::block_count() const {
  std::size_t total = 0;
  for (const auto& p : parts_) total += p.blocks.size();
  return total;
}

std::uint64_t BlockSparseLayout::pair_count() const {
  std::uint64_t total = 0;
  for (const auto& p : parts_) {
    total += p.gather_cols.size();
    for (const auto& blk : p.blocks)
      for (auto bits : blk.row_bits) total += static_cast<std::uint64_t>(__builtin_popcountll(bits));
  }
  return total;
}

RowSets BlockSparseLayout::covered_rows() const {
  RowSets rows(static_cast<std::size_t>(n_));
  for_each_pair([&](std::int32_t i, std::int32_t j) { rows[static_cast<std::size_t>(i)].push_back(j); });
  for (auto& r : rows) std::sort(r.begin(), r.end());
  return rows;
}

namespace {

std::vector<std::int32_t> identity_order(std::int32_t n) {
  std::vector<std::int32_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  return order;
}

/// Builds one part from a rule, skipping pairs owned by earlier rules.
LayoutPart build_part(const HeadRule& rule, std::span<const HeadRule> earlier, std::int32_t n, std::int32_t b) {
  using Kind = HeadRule::Kind;
  LayoutPart part;
  auto excluded = [&](std::int32_t i, std::int32_t j) {
    return std::any_of(earlier.begin(), earlier.end(), [&](const HeadRule& r) { return r.contains(i, j); });
  };

  bool blocked = true;
  switch (rule.kind) {
    case Kind::causal:
    case Kind::window:
    case Kind::same_block:
      part.strategy = LayoutStrategy::local_window;
      part.row_order = identity_order(n);
      part.col_order = part.row_order;
      break;
    case Kind::residue:
      if (rule.stride % b == 0) {
        part.strategy = LayoutStrategy::strided_transpose;
        for (std::int32_t r = 0; r < rule.stride; ++r)
          for (std::int32_t j = r; j < n; j += rule.stride) part.row_order.push_back(j);
        part.col_order = part.row_order;
      } else {
        blocked = false;
      }
      break;
    case Kind::summary:
      part.strategy = LayoutStrategy::fixed_columns;
      part.row_order = identity_order(n);
      for (std::int32_t j = 0; j < n; ++j)
        if (rule.contains(n - 1, j)) part.col_order.push_back(j);
      if (part.col_order.empty()) return part;
      break;
    case Kind::explicit_rows:
      blocked = false;
      break;
  }

  IndexList buffer;
  if (!blocked) {
    part.strategy = LayoutStrategy::gather_fallback;
    part.row_offsets.assign(1, 0);
    for (std::int32_t i = 0; i < n; ++i) {
      buffer.clear();
      rule.append_row(i, buffer);
      for (auto j : buffer)
        if (!excluded(i, j)) part.gather_cols.push_back(j);
      part.row_offsets.push_back(part.gather_cols.size());
    }
    return part;
  }

  std::vector<std::int32_t> col_local(static_cast<std::size_t>(n), -1);
  for (std::size_t q = 0; q < part.col_order.size(); ++q) col_local[static_cast<std::size_t>(part.col_order[q])] = static_cast<std::int32_t>(q);

  const auto rows_local = static_cast<std::int32_t>(part.row_order.size());
  const auto ub = static_cast<std::size_t>(b);
  for (std::int32_t rb = 0; rb * b < rows_local; ++rb) {
    std::map<std::int32_t, LayoutBlock> by_col;
    for (std::int32_t p = rb * b; p < std::min(rows_local, (rb + 1) * b); ++p) {
      const auto i = part.row_order[static_cast<std::size_t>(p)];
      buffer.clear();
      rule.append_row(i, buffer);
      for (auto j : buffer) {
        if (excluded(i, j)) continue;
        const auto q = col_local[static_cast<std::size_t>(j)];
        auto& blk = by_col[q / b];
        if (blk.row_bits.empty()) {
          blk.row_block = rb;
          blk.col_block = q / b;
          blk.row_bits.assign(ub, 0);
        }
        blk.row_bits[static_cast<std::size_t>(p - rb * b)] |= 1ULL << (q % b);
      }
    }
    for (auto& [cb, blk] : by_col) part.blocks.push_back(std::move(blk));
  }
  return part;
}

}  // namespace

BlockSparseLayout compile_block_layout(const FactorizedPattern& pattern, std::size_t head, std::int32_t block) {
  if (block < 1 || block > 64) throw ContractError("block size must be in [1, 64]");
  const auto& rules = pattern.head(head).rules;
  const auto n = pattern.length();
  std::vector<LayoutPart> parts;
  for (std::size_t r = 0; r < rules.size(); ++r) {
    LayoutPart part = build_part(rules[r], std::span<const HeadRule>(rules.data(), r), n, block);
    if (!part.blocks.empty() || !part.gather_cols.empty()) parts.push_back(std::move(part));
  }
  // Self pairs no rule produced.
  LayoutPart self;
  self.strategy = LayoutStrategy::gather_fallback;
  self.row_offsets.assign(1, 0);
  for (std::int32_t i = 0; i < n; ++i) {
    const bool covered = std::any_of(rules.begin(), rules.end(), [&](const HeadRule& r) { return r.contains(i, i); });
    if (!covered) self.gather_cols.push_back(i);
    self.row_offsets.push_back(self.gather_cols.size());
  }
  if (!self.gather_cols.empty()) parts.push_back(std::move(self));
  return BlockSparseLayout(n, block, std::move(parts));
}

bool layout_matches(const BlockSparseLayout& layout, const FactorizedPattern& pattern, std::size_t head) {
  if (layout.length() != pattern.length()) return false;
  const RowSets covered = layout.covered_rows();
  for (std::int32_t i = 0; i < pattern.length(); ++i) {
    if (covered[static_cast<std::size_t>(i)] != pattern.row(head, i)) return false;
  }
  return true;
}

namespace {

template <typename Attended>
void write_pgm(std::int32_t n, const std::filesystem::path& path, Attended attended) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P2\n" << n << ' ' << n << "\n255\n";
  for (std::int32_t i = 0; i < n; ++i) {
    for (std::int32_t j = 0; j < n; ++j) {
      out << (attended(i, j) ? "255" : "0");
      out << ((j + 1) % 16 == 0 || j + 1 == n ? '\n' : ' ');
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void render_pattern(const FactorizedPattern& pattern, const std::filesystem::path& path, int head) {
  const auto n = pattern.length();
  RowSets rows = head < 0 ? pattern.materialize_union() : pattern.materialize(static_cast<std::size_t>(head));
  write_pgm(n, path, [&](std::int32_t i, std::int32_t j) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    return std::binary_search(r.begin(), r.end(), j);
  });
}

void render_layout(const BlockSparseLayout& layout, const std::filesystem::path& path) {
  const RowSets rows = layout.covered_rows();
  write_pgm(layout.length(), path, [&](std::int32_t i, std::int32_t j) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    return std::binary_search(r.begin(), r.end(), j);
  });
}

}  // namespace sparse_attn
