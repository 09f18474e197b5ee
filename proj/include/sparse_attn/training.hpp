// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimisation loop, learning-rate schedule, evaluation and sampling.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "sparse_attn/model.hpp"

namespace sparse_attn {

struct TrainConfig {
  double peak_lr = 0.00035;
  std::size_t warmup_steps = 5000;
  std::size_t total_steps = 100000;
  double clip_norm = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::size_t checkpoint_every = 0;  // 0 writes only the final checkpoint

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep defaults; unknown keys throw ContractError.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup to peak_lr, then cosine decay to 0 at total_steps.
double lr_schedule(std::size_t step, const TrainConfig& config);

/// Global L2 norm over every gradient.
double global_norm(std::span<const Tensor> grads);
/// Scales all gradients by max_norm / norm when norm > max_norm. Returns the
/// norm before clipping.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);

struct OptState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static OptState zeros_like(std::span<Tensor* const> params);
};

/// Bias-corrected Adam with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
/// Throws NumericError (leaving everything untouched) on a non-finite gradient.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state, double lr,
               const TrainConfig& config);

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0;
  double bpb = 0;
  double grad_norm = 0;
  double wall_ms = 0;  // always 0 in deterministic mode

  nlohmann::json to_json() const;
};

struct TrainState {
  ModelParams params;
  OptState opt;
};

struct TrainOutputs {
  /// When set: metrics.ndjson, periodic step_NNNNNNNN.ckpt files and final.ckpt.
  std::optional<std::filesystem::path> run_dir;
  std::function<void(const StepMetrics&)> on_step;
};

/// Start index of window k in a corpus split into non-overlapping windows of
/// `context` bytes; the order is reshuffled every epoch from the seed.
std::vector<std::size_t> epoch_order(std::size_t windows, std::uint64_t seed, std::size_t epoch);

/// Train from `start` (or a fresh initialisation) until total_steps.
TrainState train(const ModelConfig& model_config, const TrainConfig& config, std::span<const std::uint8_t> corpus,
                 const TrainOutputs& outputs = {}, std::optional<TrainState> start = std::nullopt);

/// Checkpoint holding config, train config, parameters and optimizer moments.
CheckpointFile training_checkpoint(const ModelConfig& model_config, const TrainConfig& config, const TrainState& state);
/// Restores parameters and, when present, optimizer moments.
TrainState state_from_checkpoint(const ModelConfig& model_config, const CheckpointFile& file);

struct EvalResult {
  double bpb = 0;
  std::size_t scored = 0;
  std::size_t windows = 0;
};

/// Mean bits per byte over every position of non-overlapping windows.
EvalResult evaluate(const Model& model, const ModelParams& params, std::span<const std::uint8_t> data);

/// Windows of `context` bytes advance by context - min_context; in every window
/// only positions with at least min_context bytes of in-window history are
/// scored.
EvalResult evaluate_min_context(const Model& model, const ModelParams& params, std::span<const std::uint8_t> data,
                                std::size_t min_context);

/// Autoregressive sampling. Temperature 0 picks the argmax (lowest index on
/// ties). The prompt is copied to the output and counts toward `length`.
std::vector<std::uint8_t> sample(const Model& model, const ModelParams& params, std::size_t length, double temperature,
                                 std::uint64_t seed, std::span<const std::uint8_t> prompt = {});

}  // namespace sparse_attn
