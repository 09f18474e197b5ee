// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "sparse_attn/ops.hpp"
#include "sparse_attn/rng.hpp"

namespace sparse_attn {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("train config: " + msg); };
  if (total_steps < 1) fail("total_steps must be >= 1");
  if (warmup_steps > total_steps) fail("warmup_steps must not exceed total_steps");
  if (!(clip_norm > 0)) fail("clip_norm must be positive");
  if (!(peak_lr >= 0)) fail("peak_lr must be non-negative");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) fail("betas must be in [0, 1)");
  if (!(epsilon > 0)) fail("epsilon must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"peak_lr", c.peak_lr},           {"warmup_steps", c.warmup_steps}, {"total_steps", c.total_steps},
          {"clip_norm", c.clip_norm},       {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
          {"beta2", c.beta2},               {"epsilon", c.epsilon},           {"batch_size", c.batch_size},
          {"seed", c.seed},                 {"deterministic", c.deterministic},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("train config must be an object");
  static const std::set<std::string> known = {"peak_lr", "warmup_steps", "total_steps", "clip_norm",
                                              "weight_decay", "beta1", "beta2", "epsilon",
                                              "batch_size", "seed", "deterministic", "checkpoint_every"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ContractError("train config: unknown key '" + key + "'");
  TrainConfig c;
  try {
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_schedule(std::size_t step, const TrainConfig& c) {
  if (step > c.total_steps) throw ContractError("lr_schedule: step beyond total_steps");
  if (step <= c.warmup_steps) {
    return c.warmup_steps == 0 ? c.peak_lr : c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  const double progress =
      static_cast<double>(step - c.warmup_steps) / static_cast<double>(c.total_steps - c.warmup_steps);
  return c.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_norm(std::span<const Tensor> grads) {
  double total = 0;
  for (const auto& g : grads)
    for (Scalar v : g.data()) total += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(total);
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  if (!(max_norm > 0)) throw ContractError("clip_gradients: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      std::vector<Scalar> scaled(g.data().begin(), g.data().end());
      for (auto& v : scaled) v = static_cast<Scalar>(static_cast<double>(v) * factor);
      g = Tensor(g.shape(), std::move(scaled));
    }
  }
  return norm;
}

OptState OptState::zeros_like(std::span<Tensor* const> params) {
  OptState s;
  for (const auto* p : params) {
    s.m.push_back(Tensor::zeros(p->shape()));
    s.v.push_back(Tensor::zeros(p->shape()));
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state, double lr,
               const TrainConfig& c) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].shape() != params[k]->shape()) throw DimensionError("adam_step: gradient shape mismatch");
    if (!grads[k].all_finite()) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k));
  }
  const auto t = static_cast<double>(state.step + 1);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t size = params[k]->size();
    std::vector<Scalar> p(params[k]->data().begin(), params[k]->data().end());
    std::vector<Scalar> m(state.m[k].data().begin(), state.m[k].data().end());
    std::vector<Scalar> v(state.v[k].data().begin(), state.v[k].data().end());
    auto g = grads[k].data();
    for (std::size_t i = 0; i < size; ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<Scalar>(mi);
      v[i] = static_cast<Scalar>(vi);
      const double update = (mi / correct1) / (std::sqrt(vi / correct2) + c.epsilon) + c.weight_decay * p[i];
      p[i] = static_cast<Scalar>(p[i] - lr * update);
    }
    const Shape shape = params[k]->shape();
    *params[k] = Tensor(shape, std::move(p));
    state.m[k] = Tensor(shape, std::move(m));
    state.v[k] = Tensor(shape, std::move(v));
  }
  ++state.step;
}

nlohmann::json StepMetrics::to_json() const {
  return {{"step", step}, {"lr", lr}, {"bpb", bpb}, {"grad_norm", grad_norm}, {"wall_ms", wall_ms}};
}

std::vector<std::size_t> epoch_order(std::size_t windows, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(windows);
  for (std::size_t k = 0; k < windows; ++k) order[k] = k;
  std::mt19937_64 rng(derive_seed(stream_seed(seed, "batch"), epoch));
  // Fisher-Yates with a fixed reduction so the order does not depend on the
  // standard library's distribution implementation.
  for (std::size_t k = windows; k > 1; --k) std::swap(order[k - 1], order[rng() % k]);
  return order;
}

namespace {

std::vector<Tensor*> param_ptrs(ModelParams& params) {
  std::vector<Tensor*> out;
  for (auto& [_, t] : params.named()) out.push_back(t);
  return out;
}

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%08zu.ckpt", step);
  return buf;
}

}  // namespace

CheckpointFile training_checkpoint(const ModelConfig& model_config, const TrainConfig& config, const TrainState& state) {
  CheckpointFile file = model_checkpoint(model_config, state.params);
  file.header["train"] = to_json(config);
  file.header["step"] = state.opt.step;
  const auto named = state.params.named();
  for (std::size_t k = 0; k < named.size() && k < state.opt.m.size(); ++k) {
    file.records.emplace_back("adam.m." + named[k].first, state.opt.m[k]);
    file.records.emplace_back("adam.v." + named[k].first, state.opt.v[k]);
  }
  return file;
}

TrainState state_from_checkpoint(const ModelConfig& model_config, const CheckpointFile& file) {
  TrainState state{params_from_checkpoint(model_config, file), {}};
  auto ptrs = param_ptrs(state.params);
  state.opt = OptState::zeros_like(ptrs);
  state.opt.step = file.header.value("step", std::uint64_t{0});
  const auto named = state.params.named();
  bool any = false;
  for (const auto& [name, _] : file.records) any = any || name.rfind("adam.", 0) == 0;
  if (any) {
    for (std::size_t k = 0; k < named.size(); ++k) {
      state.opt.m[k] = file.tensor("adam.m." + named[k].first);
      state.opt.v[k] = file.tensor("adam.v." + named[k].first);
    }
  }
  return state;
}

TrainState train(const ModelConfig& model_config, const TrainConfig& config, std::span<const std::uint8_t> corpus,
                 const TrainOutputs& outputs, std::optional<TrainState> start) {
  config.validate();
  const Model model(model_config);
  const std::size_t n = model_config.context;
  if (corpus.size() < n + 1) {
    throw ContractError("corpus too small: " + std::to_string(corpus.size()) + " bytes for context " + std::to_string(n));
  }
  const std::size_t windows = corpus.size() / n;

  TrainState state;
  if (start) {
    state = std::move(*start);
  } else {
    state.params = init_params(model_config, config.seed);
  }
  auto params = param_ptrs(state.params);
  if (state.opt.m.empty()) state.opt = OptState::zeros_like(params);

  std::ofstream metrics;
  if (outputs.run_dir) {
    std::filesystem::create_directories(*outputs.run_dir);
    const auto mode = state.opt.step == 0 ? std::ios::trunc : std::ios::app;
    metrics.open(*outputs.run_dir / "metrics.ndjson", std::ios::out | mode);
    if (!metrics) throw std::runtime_error("cannot write metrics in " + outputs.run_dir->string());
  }

  const std::uint64_t dropout_stream = stream_seed(config.seed, "dropout");
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  while (state.opt.step < config.total_steps) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t step = static_cast<std::size_t>(state.opt.step) + 1;
    std::vector<Tensor> grads;
    double loss_total = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const std::size_t k = (step - 1) * config.batch_size + b;
      if (k / windows != cached_epoch) {
        cached_epoch = k / windows;
        order = epoch_order(windows, config.seed, cached_epoch);
      }
      const auto window = corpus.subspan(order[k % windows] * n, n);
      const auto inputs = shift_inputs(window);
      const auto targets = as_targets(window);

      Tape tape(Tape::Mode::record, config.deterministic);
      for (auto* p : params) tape.watch(*p);
      ForwardOptions opt;
      opt.training = true;
      opt.dropout_seed = derive_seed(dropout_stream, k);
      const Tensor loss = loss_bits_per_byte(tape, model.forward(tape, state.params, inputs, opt), targets);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (window " +
                           std::to_string(order[k % windows]) + ")");
      }
      loss_total += loss.item();
      const Gradients g = tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor gi = g.of_or_zeros(*params[i]);
        if (b == 0) {
          grads.push_back(gi);
        } else {
          std::vector<Scalar> acc(grads[i].data().begin(), grads[i].data().end());
          auto add = gi.data();
          for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += add[e];
          grads[i] = Tensor(gi.shape(), std::move(acc));
        }
      }
    }
    if (config.batch_size > 1) {
      const auto inv = Scalar{1} / static_cast<Scalar>(config.batch_size);
      for (auto& g : grads) {
        std::vector<Scalar> scaled(g.data().begin(), g.data().end());
        for (auto& v : scaled) v *= inv;
        g = Tensor(g.shape(), std::move(scaled));
      }
    }
    StepMetrics m;
    m.step = step;
    m.bpb = loss_total / static_cast<double>(config.batch_size);
    m.grad_norm = clip_gradients(grads, config.clip_norm);
    m.lr = lr_schedule(step, config);
    adam_step(params, grads, state.opt, m.lr, config);
    if (!config.deterministic) {
      m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    }
    if (metrics.is_open()) metrics << m.to_json().dump() << '\n' << std::flush;
    if (outputs.on_step) outputs.on_step(m);
    if (outputs.run_dir && config.checkpoint_every && step % config.checkpoint_every == 0 && step < config.total_steps) {
      write_checkpoint(*outputs.run_dir / step_name(step), training_checkpoint(model_config, config, state));
    }
  }
  if (outputs.run_dir) write_checkpoint(*outputs.run_dir / "final.ckpt", training_checkpoint(model_config, config, state));
  return state;
}

namespace {

EvalResult score_windows(const Model& model, const ModelParams& params, std::span<const std::uint8_t> data,
                         std::size_t advance, std::size_t min_context) {
  const std::size_t n = model.config().context;
  if (data.size() < n) {
    throw ContractError("insufficient data: " + std::to_string(data.size()) + " bytes for context " + std::to_string(n));
  }
  EvalResult result;
  double total_bits = 0;
  for (std::size_t startpos = 0; startpos + n <= data.size(); startpos += advance) {
    const auto window = data.subspan(startpos, n);
    Tape tape(Tape::Mode::inference);
    const Tensor logits = model.forward(tape, params, shift_inputs(window));
    const std::size_t v = logits.cols();
    for (std::size_t i = min_context; i < n; ++i) {
      const Scalar* row = logits.row(i);
      const double mx = *std::max_element(row, row + v);
      double s = 0;
      for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
      total_bits += (mx + std::log(s) - static_cast<double>(row[window[i]])) / std::numbers::ln2;
      ++result.scored;
    }
    ++result.windows;
  }
  result.bpb = total_bits / static_cast<double>(result.scored);
  return result;
}

}  // namespace

EvalResult evaluate(const Model& model, const ModelParams& params, std::span<const std::uint8_t> data) {
  return score_windows(model, params, data, model.config().context, 0);
}

EvalResult evaluate_min_context(const Model& model, const ModelParams& params, std::span<const std::uint8_t> data,
                                std::size_t min_context) {
  const std::size_t n = model.config().context;
  if (min_context >= n) throw ContractError("min_context must be smaller than the context length");
  return score_windows(model, params, data, n - min_context, min_context);
}

std::vector<std::uint8_t> sample(const Model& model, const ModelParams& params, std::size_t length, double temperature,
                                 std::uint64_t seed, std::span<const std::uint8_t> prompt) {
  const std::size_t n = model.config().context;
  if (length > n) throw ContractError("sample: length exceeds the context");
  if (prompt.size() > length) throw ContractError("sample: prompt longer than the requested length");
  if (!(temperature >= 0)) throw ContractError("sample: temperature must be non-negative");
  std::vector<std::uint8_t> out(prompt.begin(), prompt.end());
  std::mt19937_64 rng(stream_seed(seed, "sample"));
  // Padding past the current position leaves earlier logits unchanged, so
  // every step reuses the full-length plan.
  std::vector<std::int32_t> inputs(n, 0);
  for (std::size_t i = 0; i < out.size() && i + 1 < n; ++i) inputs[i + 1] = out[i];
  while (out.size() < length) {
    const std::size_t t = out.size();
    Tape tape(Tape::Mode::inference);
    const Tensor logits = model.forward(tape, params, inputs);
    const Scalar* row = logits.row(t);
    const std::size_t v = logits.cols();
    std::size_t pick = 0;
    if (temperature == 0) {
      for (std::size_t j = 1; j < v; ++j)
        if (row[j] > row[pick]) pick = j;
    } else {
      const double mx = *std::max_element(row, row + v);
      std::vector<double> weights(v);
      double total = 0;
      for (std::size_t j = 0; j < v; ++j) total += (weights[j] = std::exp((row[j] - mx) / temperature));
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
      double cumulative = 0;
      pick = v - 1;
      for (std::size_t j = 0; j < v; ++j) {
        cumulative += weights[j];
        if (u < cumulative) {
          pick = j;
          break;
        }
      }
    }
    out.push_back(static_cast<std::uint8_t>(pick));
    if (t + 1 < n) inputs[t + 1] = static_cast<std::int32_t>(pick);
  }
  return out;
}

}  // namespace sparse_attn
