// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/tape.hpp"

#include <algorithm>

namespace sparse_attn {

const Tensor& Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) throw ContractError("no gradient recorded for tensor " + std::to_string(t.id()));
  return it->second;
}

Tensor Gradients::of_or_zeros(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? Tensor::zeros(t.shape()) : it->second;
}

bool BackwardContext::wants(std::size_t index) const {
  const auto& node = tape_.nodes_[node_];
  return index < node.input_wants.size() && node.input_wants[index];
}

void BackwardContext::add(std::size_t index, Tensor grad) {
  const auto& node = tape_.nodes_[node_];
  if (index >= node.inputs.size()) throw ContractError("backward: input index out of range");
  if (!node.input_wants[index]) return;
  tape_.accumulate(node.inputs[index], std::move(grad));
}

void BackwardContext::report_nested_peak(std::size_t peak) { tape_.note_peak(peak); }

bool BackwardContext::deterministic() const { return tape_.deterministic(); }

void Tape::watch(const Tensor& t) {
  requires_.insert(t.id());
  leaves_.insert(t.id());
}

bool Tape::any_requires_grad(std::span<const Tensor> inputs) const {
  return std::any_of(inputs.begin(), inputs.end(), [&](const Tensor& t) { return requires_grad(t); });
}

void Tape::record(std::string op, std::vector<Tensor> inputs, const Tensor& output,
                  std::vector<Tensor> saved, BackwardFn backward) {
  if (!recording() || !any_requires_grad(inputs)) return;
  Node node;
  node.inputs.reserve(inputs.size());
  node.input_wants.reserve(inputs.size());
  for (const auto& in : inputs) {
    node.inputs.push_back(in.id());
    node.input_wants.push_back(requires_grad(in));
  }
  node.output = output.id();
  requires_.insert(output.id());
  retain(saved);
  node.saved = std::move(saved);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  op_names_.push_back(std::move(op));
}

void Tape::retain(const std::vector<Tensor>& saved) {
  for (const auto& t : saved)
    if (!leaves_.count(t.id())) ++saved_refs_[t.id()];
  note_peak();
}

void Tape::release(Node& node) {
  for (const auto& t : node.saved) {
    auto it = saved_refs_.find(t.id());
    if (it != saved_refs_.end() && --it->second == 0) saved_refs_.erase(it);
  }
  node.saved.clear();
  node.backward = nullptr;
}

void Tape::note_peak(std::size_t extra) {
  peak_saved_ = std::max(peak_saved_, saved_refs_.size() + extra);
}

void Tape::accumulate(TensorId id, Tensor grad) {
  auto it = pending_.find(id);
  if (it == pending_.end()) {
    pending_.emplace(id, std::move(grad));
    return;
  }
  const Tensor& prev = it->second;
  if (prev.shape() != grad.shape()) {
    throw DimensionError("gradient shape mismatch " + shape_string(prev.shape()) + " vs " +
                         shape_string(grad.shape()));
  }
  std::vector<Scalar> sum(prev.data().begin(), prev.data().end());
  auto g = grad.data();
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
  it->second = Tensor(prev.shape(), std::move(sum));
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  }
  return backward_from(loss, Tensor::full(loss.shape(), Scalar{1}));
}

Gradients Tape::backward_from(const Tensor& output, const Tensor& grad_output) {
  if (consumed_) throw ContractError("tape already consumed by a previous backward pass");
  if (mode_ != Mode::record) throw ContractError("backward on an inference tape");
  if (!requires_grad(output)) throw ContractError("backward: tensor was not produced on this tape");
  if (grad_output.shape() != output.shape()) {
    throw DimensionError("backward: upstream gradient shape " + shape_string(grad_output.shape()) +
                         " does not match " + shape_string(output.shape()));
  }
  consumed_ = true;
  pending_.clear();
  pending_.emplace(output.id(), grad_output);

  for (std::size_t k = nodes_.size(); k-- > 0;) {
    Node& node = nodes_[k];
    auto it = pending_.find(node.output);
    if (it != pending_.end()) {
      Tensor g = std::move(it->second);
      pending_.erase(it);
      BackwardContext ctx(*this, k);
      node.backward(g, ctx);
    }
    release(node);
  }

  Gradients grads;
  for (auto& [id, g] : pending_) {
    if (leaves_.count(id)) grads.set(id, std::move(g));
  }
  pending_.clear();
  return grads;
}

TapeStats Tape::stats() const {
  return TapeStats{nodes_.size(), saved_refs_.size(), peak_saved_};
}

}  // namespace sparse_attn
