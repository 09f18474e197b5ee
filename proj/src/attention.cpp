// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sparse_attn/kernels.hpp"
#include "sparse_attn/ops.hpp"

namespace sparse_attn {

void AttentionParams::shapes(std::size_t d, std::size_t n_heads, bool half_qk, std::size_t& qk_dim,
                             std::size_t& v_dim) {
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                         " heads");
  }
  v_dim = d / n_heads;
  if (half_qk && v_dim % 2 != 0) throw DimensionError("attention: half-size query/key needs an even head width");
  qk_dim = half_qk ? v_dim / 2 : v_dim;
}

void AttentionParams::validate(std::size_t d) const {
  auto expect = [&](const Tensor& t, std::size_t r, std::size_t c, const char* name) {
    if (t.rank() != 2 || t.rows() != r || t.cols() != c) {
      throw DimensionError(std::string("attention: ") + name + " has shape " + shape_string(t.shape()) +
                           ", expected [" + std::to_string(r) + ", " + std::to_string(c) + "]");
    }
  };
  if (n_heads == 0 || qk_dim == 0 || v_dim == 0) throw DimensionError("attention: empty head configuration");
  expect(w_q, d, n_heads * qk_dim, "w_q");
  expect(w_k, d, n_heads * qk_dim, "w_k");
  expect(w_v, d, n_heads * v_dim, "w_v");
  expect(w_p, n_heads * v_dim, d, "w_p");
}

std::string_view to_string(HeadStrategy strategy) {
  switch (strategy) {
    case HeadStrategy::interleaved: return "interleaved";
    case HeadStrategy::merged: return "merged";
    case HeadStrategy::multihead: return "multihead";
  }
  return "?";
}

HeadStrategy parse_head_strategy(std::string_view name) {
  if (name == "interleaved") return HeadStrategy::interleaved;
  if (name == "merged") return HeadStrategy::merged;
  if (name == "multihead") return HeadStrategy::multihead;
  throw ContractError("unknown head strategy '" + std::string(name) + "'");
}

namespace {

/// Residues of member k out of a group of g heads sharing one summary head.
std::vector<std::int32_t> split_residues(const std::vector<std::int32_t>& residues, std::size_t k, std::size_t g) {
  const std::size_t c = residues.size();
  if (c % g == 0) {
    const std::size_t w = c / g;
    return {residues.begin() + static_cast<std::ptrdiff_t>(k * w), residues.begin() + static_cast<std::ptrdiff_t>((k + 1) * w)};
  }
  if (k >= c) return {residues[k % c]};
  std::vector<std::int32_t> out;
  for (std::size_t t = k; t < c; t += g) out.push_back(residues[t]);
  return out;
}

}  // namespace

HeadAssignment apply_head_strategy(const FactorizedPattern& pattern, HeadStrategy strategy, std::size_t layer,
                                   std::size_t n_heads) {
  if (n_heads == 0) throw ContractError("attention needs at least one head");
  HeadAssignment out;
  const std::size_t p = pattern.num_heads();
  switch (strategy) {
    case HeadStrategy::interleaved: {
      const std::size_t m = layer % p;
      out.patterns.push_back(select_head(pattern, m));
      out.head_pattern.assign(n_heads, 0);
      out.factor_head.assign(n_heads, static_cast<int>(m));
      break;
    }
    case HeadStrategy::merged:
      out.patterns.push_back(merge_heads(pattern));
      out.head_pattern.assign(n_heads, 0);
      out.factor_head.assign(n_heads, p == 1 ? 0 : -1);
      break;
    case HeadStrategy::multihead: {
      if (n_heads % p != 0) {
        throw ContractError("multihead strategy needs the head count (" + std::to_string(n_heads) +
                            ") to be a multiple of the pattern's " + std::to_string(p) + " heads");
      }
      const std::size_t g = n_heads / p;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t m = h / g, k = h % g;
        const auto& rules = pattern.head(m).rules;
        const bool splits = g > 1 && std::any_of(rules.begin(), rules.end(), [](const HeadRule& r) {
          return r.kind == HeadRule::Kind::summary;
        });
        if (!splits) {
          if (k == 0) out.patterns.push_back(select_head(pattern, m));
        } else {
          PatternHead head = pattern.head(m);
          for (auto& rule : head.rules)
            if (rule.kind == HeadRule::Kind::summary) rule.residues = split_residues(rule.residues, k, g);
          out.patterns.emplace_back(PatternKind::custom, pattern.length(), pattern.stride(), pattern.summary_width(),
                                    std::vector<PatternHead>{std::move(head)});
        }
        out.head_pattern.push_back(out.patterns.size() - 1);
        out.factor_head.push_back(static_cast<int>(m));
      }
      break;
    }
  }
  return out;
}

HeadLayouts compile_head_layouts(const HeadAssignment& assignment, std::int32_t block) {
  std::vector<std::shared_ptr<const BlockSparseLayout>> compiled;
  for (const auto& pat : assignment.patterns)
    compiled.push_back(std::make_shared<const BlockSparseLayout>(compile_block_layout(pat, 0, block)));
  HeadLayouts out;
  for (auto idx : assignment.head_pattern) out.push_back(compiled.at(idx));
  return out;
}

std::vector<RowSets> head_rows(const HeadAssignment& assignment) {
  std::vector<RowSets> distinct;
  for (const auto& pat : assignment.patterns) distinct.push_back(pat.materialize(0));
  std::vector<RowSets> out;
  for (auto idx : assignment.head_pattern) out.push_back(distinct.at(idx));
  return out;
}

Tensor dense_attention(Tape& tape, const Tensor& x, const AttentionParams& params, std::span<const RowSets> allowed,
                       std::size_t max_length) {
  if (x.rank() != 2) throw DimensionError("dense_attention: input must be a matrix");
  params.validate(x.cols());
  const std::size_t n = x.rows();
  if (n > max_length) {
    throw ContractError("dense_attention: length " + std::to_string(n) + " exceeds the oracle limit " +
                        std::to_string(max_length));
  }
  if (allowed.size() != params.n_heads) throw DimensionError("dense_attention: need one row set per head");
  const Tensor q = matmul(tape, x, params.w_q);
  const Tensor k = matmul(tape, x, params.w_k);
  const Tensor v = matmul(tape, x, params.w_v);
  const Scalar inv_scale = Scalar{1} / std::sqrt(static_cast<Scalar>(params.qk_dim));
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < params.n_heads; ++h) {
    const Tensor qh = slice_cols(tape, q, h * params.qk_dim, (h + 1) * params.qk_dim);
    const Tensor kh = slice_cols(tape, k, h * params.qk_dim, (h + 1) * params.qk_dim);
    const Tensor vh = slice_cols(tape, v, h * params.v_dim, (h + 1) * params.v_dim);
    const Tensor logits = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_scale);
    heads.push_back(matmul(tape, masked_softmax(tape, logits, allowed[h]), vh));
  }
  const Tensor merged = heads.size() == 1 ? heads[0] : concat_cols(tape, heads);
  return matmul(tape, merged, params.w_p);
}

Tensor block_sparse_attend(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, const HeadLayouts& layouts,
                           KernelCounters* counters) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.rank() != 2 || v.rows() != q.rows()) {
    throw DimensionError("block_sparse_attend: q/k/v shapes " + shape_string(q.shape()) + ", " +
                         shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  const std::size_t heads = layouts.size();
  const std::size_t n = q.rows();
  if (heads == 0 || q.cols() % heads != 0 || v.cols() % heads != 0) {
    throw DimensionError("block_sparse_attend: widths not divisible by " + std::to_string(heads) + " heads");
  }
  for (const auto& layout : layouts) {
    if (!layout || static_cast<std::size_t>(layout->length()) != n) {
      throw ContractError("block_sparse_attend: layout length differs from sequence length " + std::to_string(n));
    }
  }
  const std::size_t dk = q.cols() / heads, dv = v.cols() / heads;
  const std::size_t qw = q.cols(), vw = v.cols();
  const Scalar root = std::sqrt(static_cast<Scalar>(dk));
  const Scalar* qd = q.data().data();
  const Scalar* kd = k.data().data();
  const Scalar* vd = v.data().data();

  std::vector<Scalar> out(n * vw, Scalar{0});
  std::vector<Scalar> lse(heads * n);
  std::vector<Scalar> row_max(n), row_sum(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t qo = h * dk, vo = h * dv;
    const auto& layout = *layouts[h];
    std::fill(row_max.begin(), row_max.end(), -std::numeric_limits<Scalar>::infinity());
    std::fill(row_sum.begin(), row_sum.end(), Scalar{0});
    layout.for_each_pair([&](std::int32_t i, std::int32_t j) {
      const Scalar s = kernels::dot(qd + i * qw + qo, kd + j * qw + qo, dk) / root;
      row_max[i] = std::max(row_max[i], s);
      if (counters) {
        ++counters->pairs;
        // Score pass, recomputed score, then the weighted value row.
        counters->macs += 2 * dk + dv;
        if (j > i) ++counters->upper_touches;
        if (counters->record_scores) counters->scores.push_back({static_cast<std::uint32_t>(h), i, j, s});
      }
    });
    layout.for_each_pair([&](std::int32_t i, std::int32_t j) {
      const Scalar s = kernels::dot(qd + i * qw + qo, kd + j * qw + qo, dk) / root;
      const Scalar e = std::exp(s - row_max[i]);
      row_sum[i] += e;
      kernels::axpy(e, vd + j * vw + vo, out.data() + i * vw + vo, dv);
    });
    for (std::size_t i = 0; i < n; ++i) {
      if (row_sum[i] == Scalar{0}) throw ContractError("block_sparse_attend: row " + std::to_string(i) + " is not covered");
      const Scalar inv = Scalar{1} / row_sum[i];
      for (std::size_t c = 0; c < dv; ++c) out[i * vw + vo + c] *= inv;
      lse[h * n + i] = row_max[i] + std::log(row_sum[i]);
    }
  }

  Tensor o({n, vw}, std::move(out));
  Tensor stats({heads, n}, std::move(lse));
  tape.record("block_sparse_attend", {q, k, v}, o, {q, k, v, o, stats},
              [q, k, v, o, stats, layouts, n, dk, dv, qw, vw, heads, root](const Tensor& g, BackwardContext& ctx) {
                const Scalar* qd = q.data().data();
                const Scalar* kd = k.data().data();
                const Scalar* vd = v.data().data();
                const Scalar* od = o.data().data();
                const Scalar* gd = g.data().data();
                const Scalar* ls = stats.data().data();
                std::vector<Scalar> dq(n * qw, Scalar{0}), dk_(n * qw, Scalar{0}), dvv(n * vw, Scalar{0});
                std::vector<Scalar> delta(n);
                for (std::size_t h = 0; h < heads; ++h) {
                  const std::size_t qo = h * dk, vo = h * dv;
                  for (std::size_t i = 0; i < n; ++i) delta[i] = kernels::dot(gd + i * vw + vo, od + i * vw + vo, dv);
                  layouts[h]->for_each_pair([&](std::int32_t i, std::int32_t j) {
                    const Scalar s = kernels::dot(qd + i * qw + qo, kd + j * qw + qo, dk) / root;
                    const Scalar p = std::exp(s - ls[h * n + static_cast<std::size_t>(i)]);
                    const Scalar dp = kernels::dot(gd + i * vw + vo, vd + j * vw + vo, dv);
                    const Scalar ds = p * (dp - delta[i]) / root;
                    kernels::axpy(p, gd + i * vw + vo, dvv.data() + j * vw + vo, dv);
                    kernels::axpy(ds, kd + j * qw + qo, dq.data() + i * qw + qo, dk);
                    kernels::axpy(ds, qd + i * qw + qo, dk_.data() + j * qw + qo, dk);
                  });
                }
                ctx.add(0, Tensor({n, qw}, std::move(dq)));
                ctx.add(1, Tensor({n, qw}, std::move(dk_)));
                ctx.add(2, Tensor({n, vw}, std::move(dvv)));
              });
  return o;
}

Tensor sparse_attention(Tape& tape, const Tensor& x, const AttentionParams& params, const HeadLayouts& layouts,
                        KernelCounters* counters) {
  if (x.rank() != 2) throw DimensionError("sparse_attention: input must be a matrix");
  params.validate(x.cols());
  if (layouts.size() != params.n_heads) throw DimensionError("sparse_attention: need one layout per head");
  const Tensor q = matmul(tape, x, params.w_q);
  const Tensor k = matmul(tape, x, params.w_k);
  const Tensor v = matmul(tape, x, params.w_v);
  return matmul(tape, block_sparse_attend(tape, q, k, v, layouts, counters), params.w_p);
}

}  // namespace sparse_attn
