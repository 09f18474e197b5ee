// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/checkpoint.hpp"

#include <cstring>

namespace sparse_attn {

namespace {

std::uint64_t fingerprint(const Tensor& t) {
  // FNV-1a over the raw bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
  for (std::size_t i = 0; i < t.size() * sizeof(Scalar); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Tensor checkpoint_segment(Tape& tape, SegmentFn f, std::vector<Tensor> inputs) {
  Tensor output;
  {
    Tape scratch(Tape::Mode::inference, tape.deterministic());
    output = f(scratch, inputs);
  }
  if (!tape.recording() || !tape.any_requires_grad(inputs)) return output;

  const std::uint64_t expected = fingerprint(output);
  tape.record("checkpoint", inputs, output, inputs,
              [f = std::move(f), inputs, expected](const Tensor& g, BackwardContext& ctx) {
                Tape inner(Tape::Mode::record, ctx.deterministic());
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                  if (ctx.wants(i)) inner.watch(inputs[i]);
                }
                Tensor replay = f(inner, inputs);
                if (ctx.deterministic() && fingerprint(replay) != expected) {
                  throw ContractError("checkpoint_segment: recomputation differs from the original forward pass");
                }
                if (!inner.requires_grad(replay)) return;
                Gradients grads = inner.backward_from(replay, g);
                ctx.report_nested_peak(inner.stats().peak_saved);
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                  if (ctx.wants(i)) ctx.add(i, grads.of_or_zeros(inputs[i]));
                }
              });
  return output;
}

}  // namespace sparse_attn
