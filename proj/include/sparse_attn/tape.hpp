// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation tape.
//
// Every differentiable op receives the tape explicitly. When at least one input
// requires a gradient the op appends a node holding a backward closure plus the
// list of tensors that closure keeps alive ("saved" tensors). The tape counts
// distinct saved tensors while nodes are alive so memory behaviour of
// checkpointed and plain execution can be compared.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sparse_attn/tensor.hpp"

namespace sparse_attn {

/// Gradients keyed by tensor id.
class Gradients {
 public:
  bool has(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  const Tensor& of(const Tensor& t) const;
  /// Gradient of t, or zeros of t's shape when t did not participate.
  Tensor of_or_zeros(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

  void set(TensorId id, Tensor g) { grads_[id] = std::move(g); }

 private:
  std::unordered_map<TensorId, Tensor> grads_;
};

struct TapeStats {
  std::size_t nodes = 0;
  // Watched leaves (parameters) are not counted; these are activations only.
  std::size_t live_saved = 0;    // distinct saved tensors held right now
  std::size_t peak_saved = 0;    // max of live_saved, including nested recomputation
};

class Tape;

/// Handed to each node's backward closure.
class BackwardContext {
 public:
  /// True when input `index` of the current node needs a gradient.
  bool wants(std::size_t index) const;
  /// Accumulate a gradient contribution for input `index`.
  void add(std::size_t index, Tensor grad);
  /// Report the peak saved count of a nested tape (checkpoint recomputation).
  void report_nested_peak(std::size_t peak);
  bool deterministic() const;

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  Tape& tape_;
  std::size_t node_;
};

using BackwardFn = std::function<void(const Tensor& grad_output, BackwardContext& ctx)>;

class Tape {
 public:
  enum class Mode { record, inference };

  explicit Tape(Mode mode = Mode::record, bool deterministic = true)
      : mode_(mode), deterministic_(deterministic) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::record && !consumed_; }
  bool deterministic() const { return deterministic_; }

  /// Mark a leaf (typically a parameter) as requiring a gradient.
  void watch(const Tensor& t);
  bool requires_grad(const Tensor& t) const { return requires_.count(t.id()) != 0; }
  bool any_requires_grad(std::span<const Tensor> inputs) const;

  /// Append a node. No-op unless recording and some input requires grad.
  void record(std::string op, std::vector<Tensor> inputs, const Tensor& output,
              std::vector<Tensor> saved, BackwardFn backward);

  /// Gradients of a scalar loss with respect to every watched leaf.
  Gradients backward(const Tensor& loss);
  /// Propagate an explicit upstream gradient from `output`.
  Gradients backward_from(const Tensor& output, const Tensor& grad_output);

  TapeStats stats() const;
  const std::vector<std::string>& op_log() const { return op_names_; }

 private:
  friend class BackwardContext;

  struct Node {
    std::vector<TensorId> inputs;
    std::vector<bool> input_wants;
    TensorId output = 0;
    std::vector<Tensor> saved;
    BackwardFn backward;
  };

  void retain(const std::vector<Tensor>& saved);
  void release(Node& node);
  void accumulate(TensorId id, Tensor grad);
  void note_peak(std::size_t extra = 0);

  Mode mode_;
  bool deterministic_;
  bool consumed_ = false;
  std::unordered_set<TensorId> requires_;
  std::unordered_set<TensorId> leaves_;
  std::vector<Node> nodes_;
  std::vector<std::string> op_names_;
  std::unordered_map<TensorId, std::size_t> saved_refs_;
  std::size_t peak_saved_ = 0;
  std::unordered_map<TensorId, Tensor> pending_;
};

}  // namespace sparse_attn
