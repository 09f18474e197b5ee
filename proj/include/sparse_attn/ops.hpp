// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Matrices are row-major [rows x cols];
// row vectors are multiplied on the left (X * W), so a d_in -> d_out linear
// map has weight shape [d_in x d_out].

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparse_attn/tape.hpp"
#include "sparse_attn/tensor.hpp"

namespace sparse_attn {

using IndexList = std::vector<std::int32_t>;
/// Per-row sorted column index sets.
using RowSets = std::vector<IndexList>;

inline constexpr Scalar kLayerNormEpsilon = Scalar(1e-5);
inline constexpr Scalar kGeluSlope = Scalar(1.702);

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, Scalar factor);
/// x[n x d] + bias[d] broadcast over rows.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor sum(Tape& tape, const Tensor& a);

/// Softmax over each row restricted to `allowed[row]`; every other entry is 0.
/// Rows are stabilised by subtracting the max over the allowed entries.
Tensor masked_softmax(Tape& tape, const Tensor& logits, const RowSets& allowed);

/// Row-wise layer normalisation with learned gain and bias.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias);

/// x * sigmoid(1.702 x).
Tensor gelu(Tape& tape, const Tensor& x);

/// Inverted dropout whose mask is a pure function of (seed, element index).
/// rate == 0 returns x unchanged.
Tensor dropout(Tape& tape, const Tensor& x, Scalar rate, std::uint64_t seed);

/// out[i] = table[indices[i]].
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int32_t> indices);

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);

/// Mean over rows of -log2 softmax(logits[row])[targets[row]].
Tensor mean_nll_bits(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets);

/// Keep-probability draw used by dropout; exposed for tests.
bool dropout_keeps(std::uint64_t seed, std::size_t index, Scalar rate);

}  // namespace sparse_attn
