// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sparse_attn/tape.hpp"

namespace sparse_attn {

/// A pure tensor function. Any randomness must come from seeds captured by the
/// function object so that a second evaluation reproduces the first exactly.
using SegmentFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

/// Evaluate `f(inputs)` without retaining its intermediates.
///
/// The outer tape keeps only the inputs. During backward the segment is run
/// again on a private tape and differentiated locally. On a deterministic tape
/// the recomputed output must hash identically to the original or backward
/// throws ContractError.
Tensor checkpoint_segment(Tape& tape, SegmentFn f, std::vector<Tensor> inputs);

}  // namespace sparse_attn
