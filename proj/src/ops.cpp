// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sparse_attn/kernels.hpp"
#include "sparse_attn/rng.hpp"

namespace sparse_attn {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  std::vector<Scalar> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(a.shape(), std::move(out));
}

Scalar sigmoid(Scalar x) {
  // Split on sign so exp never overflows.
  if (x >= 0) return Scalar{1} / (Scalar{1} + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar{1} + e);
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  std::vector<Scalar> out(m * n);
  kernels::gemm(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor c({m, n}, std::move(out));
  tape.record("matmul", {a, b}, c, {a, b}, [a, b, m, k, n](const Tensor& g, BackwardContext& ctx) {
    if (ctx.wants(0)) {
      std::vector<Scalar> da(m * k);
      kernels::gemm_nt(g.data().data(), b.data().data(), da.data(), m, n, k);
      ctx.add(0, Tensor({m, k}, std::move(da)));
    }
    if (ctx.wants(1)) {
      std::vector<Scalar> db(k * n);
      kernels::gemm_tn(a.data().data(), g.data().data(), db.data(), k, m, n);
      ctx.add(1, Tensor({k, n}, std::move(db)));
    }
  });
  return c;
}

namespace {

Tensor transpose_raw(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<Scalar> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return Tensor({c, r}, std::move(out));
}

}  // namespace

Tensor transpose(Tape& tape, const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t = transpose_raw(a);
  tape.record("transpose", {a}, t, {}, [](const Tensor& g, BackwardContext& ctx) {
    ctx.add(0, transpose_raw(g));
  });
  return t;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Scalar> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor c(a.shape(), std::move(out));
  tape.record("add", {a, b}, c, {}, [](const Tensor& g, BackwardContext& ctx) {
    ctx.add(0, g);
    ctx.add(1, g);
  });
  return c;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Scalar> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tensor c(a.shape(), std::move(out));
  tape.record("sub", {a, b}, c, {}, [](const Tensor& g, BackwardContext& ctx) {
    ctx.add(0, g);
    if (ctx.wants(1)) ctx.add(1, map_unary(g, [](Scalar v) { return -v; }));
  });
  return c;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Scalar> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor c(a.shape(), std::move(out));
  tape.record("mul", {a, b}, c, {a, b}, [a, b](const Tensor& g, BackwardContext& ctx) {
    auto gd = g.data();
    for (int side = 0; side < 2; ++side) {
      if (!ctx.wants(side)) continue;
      auto other = (side == 0 ? b : a).data();
      std::vector<Scalar> d(gd.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] * other[i];
      ctx.add(side, Tensor(g.shape(), std::move(d)));
    }
  });
  return c;
}

Tensor scale(Tape& tape, const Tensor& a, Scalar factor) {
  Tensor c = map_unary(a, [factor](Scalar v) { return v * factor; });
  tape.record("scale", {a}, c, {}, [factor](const Tensor& g, BackwardContext& ctx) {
    ctx.add(0, map_unary(g, [factor](Scalar v) { return v * factor; }));
  });
  return c;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t n = x.rows(), d = x.cols();
  if (bias.size() != d) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs rows of width " + std::to_string(d));
  }
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bd[j];
  Tensor c(x.shape(), std::move(out));
  tape.record("add_bias", {x, bias}, c, {}, [n, d, bshape = bias.shape()](const Tensor& g, BackwardContext& ctx) {
    ctx.add(0, g);
    if (ctx.wants(1)) {
      std::vector<Scalar> db(d, Scalar{0});
      auto gd = g.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) db[j] += gd[i * d + j];
      ctx.add(1, Tensor(bshape, std::move(db)));
    }
  });
  return c;
}

Tensor sum(Tape& tape, const Tensor& a) {
  Scalar s = 0;
  for (Scalar v : a.data()) s += v;
  Tensor c = Tensor::scalar(s);
  tape.record("sum", {a}, c, {}, [shape = a.shape()](const Tensor& g, BackwardContext& ctx) {
    ctx.add(0, Tensor::full(shape, g.item()));
  });
  return c;
}

Tensor masked_softmax(Tape& tape, const Tensor& logits, const RowSets& allowed) {
  require_matrix(logits, "masked_softmax");
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (allowed.size() != rows) {
    throw DimensionError("masked_softmax: " + std::to_string(allowed.size()) + " index sets for " +
                         std::to_string(rows) + " rows");
  }
  std::vector<Scalar> out(rows * cols, Scalar{0});
  auto in = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& idx = allowed[r];
    if (idx.empty()) throw ContractError("masked_softmax: row " + std::to_string(r) + " has no allowed entries");
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0 || static_cast<std::size_t>(idx[k]) >= cols || (k && idx[k] <= idx[k - 1])) {
        throw ContractError("masked_softmax: row " + std::to_string(r) + " index set must be sorted, unique and in range");
      }
    }
    const Scalar* x = in.data() + r * cols;
    Scalar* y = out.data() + r * cols;
    Scalar mx = x[idx[0]];
    for (auto j : idx) mx = std::max(mx, x[j]);
    Scalar total = 0;
    for (auto j : idx) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (auto j : idx) y[j] /= total;
  }
  Tensor p(logits.shape(), std::move(out));
  tape.record("masked_softmax", {logits}, p, {p}, [p, allowed, cols](const Tensor& g, BackwardContext& ctx) {
    std::vector<Scalar> d(p.size(), Scalar{0});
    auto pd = p.data(), gd = g.data();
    for (std::size_t r = 0; r < allowed.size(); ++r) {
      const std::size_t base = r * cols;
      Scalar inner = 0;
      for (auto j : allowed[r]) inner += pd[base + j] * gd[base + j];
      for (auto j : allowed[r]) d[base + j] = pd[base + j] * (gd[base + j] - inner);
    }
    ctx.add(0, Tensor(p.shape(), std::move(d)));
  });
  return p;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) throw DimensionError("layer_norm: gain/bias width must equal " + std::to_string(d));
  std::vector<Scalar> normalized(n * d), inv_std(n), out(n * d);
  auto xd = x.data(), gd = gain.data(), bd = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar* row = xd.data() + i * d;
    Scalar mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Scalar>(d);
    inv_std[i] = Scalar{1} / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < d; ++j) {
      normalized[i * d + j] = (row[j] - mean) * inv_std[i];
      out[i * d + j] = normalized[i * d + j] * gd[j] + bd[j];
    }
  }
  Tensor y(x.shape(), std::move(out));
  Tensor xhat(x.shape(), std::move(normalized));
  Tensor istd({n}, std::move(inv_std));
  tape.record("layer_norm", {x, gain, bias}, y, {xhat, istd, gain},
              [xhat, istd, gain, n, d, gshape = gain.shape()](const Tensor& g, BackwardContext& ctx) {
                auto gdat = g.data(), xh = xhat.data(), is = istd.data(), ga = gain.data();
                if (ctx.wants(0)) {
                  std::vector<Scalar> dx(n * d);
                  std::vector<Scalar> dxhat(d);
                  for (std::size_t i = 0; i < n; ++i) {
                    Scalar mean_dxhat = 0, mean_dxhat_xhat = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                      dxhat[j] = gdat[i * d + j] * ga[j];
                      mean_dxhat += dxhat[j];
                      mean_dxhat_xhat += dxhat[j] * xh[i * d + j];
                    }
                    mean_dxhat /= static_cast<Scalar>(d);
                    mean_dxhat_xhat /= static_cast<Scalar>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                      dx[i * d + j] = is[i] * (dxhat[j] - mean_dxhat - xh[i * d + j] * mean_dxhat_xhat);
                    }
                  }
                  ctx.add(0, Tensor({n, d}, std::move(dx)));
                }
                if (ctx.wants(1) || ctx.wants(2)) {
                  std::vector<Scalar> dg(d, Scalar{0}), db(d, Scalar{0});
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                      dg[j] += gdat[i * d + j] * xh[i * d + j];
                      db[j] += gdat[i * d + j];
                    }
                  ctx.add(1, Tensor(gshape, std::move(dg)));
                  ctx.add(2, Tensor(gshape, std::move(db)));
                }
              });
  return y;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor y = map_unary(x, [](Scalar v) { return v * sigmoid(kGeluSlope * v); });
  tape.record("gelu", {x}, y, {x}, [x](const Tensor& g, BackwardContext& ctx) {
    std::vector<Scalar> d(x.size());
    auto xd = x.data(), gd = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Scalar s = sigmoid(kGeluSlope * xd[i]);
      d[i] = gd[i] * (s + kGeluSlope * xd[i] * s * (Scalar{1} - s));
    }
    ctx.add(0, Tensor(x.shape(), std::move(d)));
  });
  return y;
}

bool dropout_keeps(std::uint64_t seed, std::size_t index, Scalar rate) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index)));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u >= static_cast<double>(rate);
}

Tensor dropout(Tape& tape, const Tensor& x, Scalar rate, std::uint64_t seed) {
  if (rate < 0 || rate >= 1) throw ContractError("dropout: rate must be in [0, 1)");
  if (rate == 0) return x;
  const Scalar keep_scale = Scalar{1} / (Scalar{1} - rate);
  std::vector<Scalar> out(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dropout_keeps(seed, i, rate) ? xd[i] * keep_scale : Scalar{0};
  Tensor y(x.shape(), std::move(out));
  tape.record("dropout", {x}, y, {}, [seed, rate, keep_scale](const Tensor& g, BackwardContext& ctx) {
    std::vector<Scalar> d(g.size());
    auto gd = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = dropout_keeps(seed, i, rate) ? gd[i] * keep_scale : Scalar{0};
    ctx.add(0, Tensor(g.shape(), std::move(d)));
  });
  return y;
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int32_t> indices) {
  require_matrix(table, "gather_rows");
  const std::size_t rows = table.rows(), d = table.cols();
  std::vector<Scalar> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= rows) {
      throw ContractError("gather_rows: index " + std::to_string(indices[i]) + " outside table of " +
                          std::to_string(rows) + " rows");
    }
    std::copy_n(table.row(indices[i]), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Tensor y({indices.size(), d}, std::move(out));
  tape.record("gather_rows", {table}, y, {},
              [idx = std::vector<std::int32_t>(indices.begin(), indices.end()), rows, d](const Tensor& g,
                                                                                         BackwardContext& ctx) {
                std::vector<Scalar> dt(rows * d, Scalar{0});
                auto gd = g.data();
                for (std::size_t i = 0; i < idx.size(); ++i)
                  kernels::axpy(Scalar{1}, gd.data() + i * d, dt.data() + static_cast<std::size_t>(idx[i]) * d, d);
                ctx.add(0, Tensor({rows, d}, std::move(dt)));
              });
  return y;
}

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const std::size_t n = a.rows(), c = a.cols();
  if (begin >= end || end > c) throw DimensionError("slice_cols: bad range for " + shape_string(a.shape()));
  const std::size_t w = end - begin;
  std::vector<Scalar> out(n * w);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(a.row(i) + begin, w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
  Tensor y({n, w}, std::move(out));
  tape.record("slice_cols", {a}, y, {}, [n, c, begin, w](const Tensor& g, BackwardContext& ctx) {
    std::vector<Scalar> d(n * c, Scalar{0});
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(g.row(i), w, d.begin() + static_cast<std::ptrdiff_t>(i * c + begin));
    ctx.add(0, Tensor({n, c}, std::move(d)));
  });
  return y;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  std::vector<Scalar> out(n * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(p.row(i), p.cols(), out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    offset += p.cols();
  }
  Tensor y({n, total}, std::move(out));
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  tape.record("concat_cols", std::vector<Tensor>(parts.begin(), parts.end()), y, {},
              [n, total, widths](const Tensor& g, BackwardContext& ctx) {
                std::size_t off = 0;
                for (std::size_t k = 0; k < widths.size(); ++k) {
                  if (ctx.wants(k)) {
                    std::vector<Scalar> d(n * widths[k]);
                    for (std::size_t i = 0; i < n; ++i)
                      std::copy_n(g.row(i) + off, widths[k], d.begin() + static_cast<std::ptrdiff_t>(i * widths[k]));
                    ctx.add(k, Tensor({n, widths[k]}, std::move(d)));
                  }
                  off += widths[k];
                }
                (void)total;
              });
  return y;
}

Tensor mean_nll_bits(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets) {
  require_matrix(logits, "mean_nll_bits");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) throw DimensionError("mean_nll_bits: targets length differs from logits rows");
  std::vector<Scalar> lse(n);
  Scalar total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) throw ContractError("mean_nll_bits: target out of range");
    const Scalar* row = logits.row(i);
    const Scalar mx = *std::max_element(row, row + v);
    Scalar s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    lse[i] = mx + std::log(s);
    // Per-row bits, so a uniform prediction sums exact multiples of log2(v).
    total += (lse[i] - row[targets[i]]) / std::numbers::ln2_v<Scalar>;
  }
  const Scalar inv_ln2 = Scalar{1} / std::numbers::ln2_v<Scalar>;
  Tensor loss = Tensor::scalar(total / static_cast<Scalar>(n));
  tape.record("mean_nll_bits", {logits}, loss, {logits},
              [logits, lse, tg = std::vector<std::int32_t>(targets.begin(), targets.end()), n, v,
               inv_ln2](const Tensor& g, BackwardContext& ctx) {
                const Scalar coef = g.item() * inv_ln2 / static_cast<Scalar>(n);
                std::vector<Scalar> d(n * v);
                for (std::size_t i = 0; i < n; ++i) {
                  const Scalar* row = logits.row(i);
                  for (std::size_t j = 0; j < v; ++j) d[i * v + j] = coef * std::exp(row[j] - lse[i]);
                  d[i * v + static_cast<std::size_t>(tg[i])] -= coef;
                }
                ctx.add(0, Tensor({n, v}, std::move(d)));
              });
  return loss;
}

}  // namespace sparse_attn
