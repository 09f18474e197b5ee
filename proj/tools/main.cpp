// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// sparse-attn: pattern tools, benchmarks, training, evaluation and sampling.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bench.hpp"
#include "run_config.hpp"
#include "sparse_attn/corpus.hpp"
#include "sparse_attn/training.hpp"

namespace fs = std::filesystem;
using namespace sparse_attn;
using namespace sparse_attn::cli;

namespace {

constexpr int kInvalid = 1;
constexpr int kError = 2;

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_bytes(const std::optional<fs::path>& path, std::span<const std::uint8_t> bytes) {
  if (path) {
    save_corpus(*path, bytes);
    return;
  }
  std::fwrite(bytes.data(), 1, bytes.size(), stdout);
}

struct Checkpointed {
  ModelConfig config;
  ModelParams params;
};

Checkpointed load_model(const fs::path& path) {
  const CheckpointFile file = read_checkpoint(path);
  const ModelConfig config = model_config_from_json(file.header.at("config"));
  return {config, params_from_checkpoint(config, file)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factorized sparse attention: pattern tools, benchmarks, training and sampling"};
  app.require_subcommand(1);

  // verify
  std::string verify_pattern;
  std::size_t verify_steps = 2;
  auto* verify = app.add_subcommand("verify", "Check that every earlier position is reachable within p attention steps");
  verify->add_option("--pattern", verify_pattern, "kind:n[:l[:c]]")->required();
  verify->add_option("-p,--steps", verify_steps, "Allowed attention steps")->check(CLI::PositiveNumber);

  // viz
  std::string viz_pattern;
  fs::path viz_out;
  int viz_head = -1;
  auto* viz = app.add_subcommand("viz", "Render a connectivity matrix as a PGM image");
  viz->add_option("--pattern", viz_pattern, "kind:n[:l[:c]]")->required();
  viz->add_option("--out", viz_out, "Output .pgm path")->required();
  viz->add_option("--head", viz_head, "Head to render; -1 renders the union");

  // bench
  BenchOptions bench_opts;
  std::string bench_strategy = "merged";
  std::optional<fs::path> bench_out;
  bool bench_sparse_only = false;
  auto* bench = app.add_subcommand("bench", "Time dense-masked against block-sparse forward attention");
  bench->add_option("--pattern", bench_opts.pattern, "kind:n[:l[:c]]");
  bench->add_option("-d,--width", bench_opts.width, "Model width");
  bench->add_option("--heads", bench_opts.heads, "Attention heads");
  bench->add_option("--strategy", bench_strategy, "interleaved, merged or multihead");
  bench->add_option("--block", bench_opts.block, "Block size (1..64)");
  bench->add_option("--repeats", bench_opts.repeats, "Timed runs per implementation")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_opts.seed, "Input seed");
  bench->add_flag("--sparse-only", bench_sparse_only, "Skip the dense implementation and the cross-check");
  bench->add_option("--out", bench_out, "Write rows as newline-delimited JSON here instead of stdout");

  // train
  std::optional<fs::path> config_path;
  fs::path corpus_path, run_dir;
  std::optional<fs::path> resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> pattern_override;
  bool deterministic = false, nondeterministic = false;
  std::size_t log_every = 100;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a raw-byte corpus");
  train_cmd->add_option("--config", config_path, "JSON run config with model, train and pattern sections");
  train_cmd->add_option("--corpus", corpus_path, "Raw-byte training corpus")->required();
  train_cmd->add_option("--out", run_dir, "Run directory")->required();
  train_cmd->add_option("--seed", seed, "Seed for initialisation, batching and dropout");
  train_cmd->add_option("--pattern", pattern_override, "kind:n[:l[:c]]; sets pattern, context and stride");
  train_cmd->add_flag("--deterministic", deterministic, "Bitwise-reproducible mode (the default)");
  train_cmd->add_flag("--nondeterministic", nondeterministic, "Record wall-clock timings");
  train_cmd->add_option("--resume", resume, "Training checkpoint to continue from");
  train_cmd->add_option("--log-every", log_every, "Progress interval in steps; 0 disables");

  // eval
  fs::path eval_ckpt, eval_corpus;
  std::vector<std::size_t> min_contexts;
  auto* eval = app.add_subcommand("eval", "Bits per byte of a checkpoint on a corpus");
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--corpus", eval_corpus, "Raw-byte corpus")->required();
  eval->add_option("--min-context", min_contexts, "Score only positions with this much history; repeatable");

  // sample
  fs::path sample_ckpt;
  std::size_t sample_length = 0;
  double temperature = 1.0;
  std::uint64_t sample_seed = 0;
  std::optional<fs::path> sample_prompt, sample_out;
  auto* sample_cmd = app.add_subcommand("sample", "Generate bytes from a checkpoint");
  sample_cmd->add_option("--checkpoint", sample_ckpt, "Model checkpoint")->required();
  sample_cmd->add_option("--length", sample_length, "Output length including the prompt; defaults to the context");
  sample_cmd->add_option("--temperature", temperature, "Softmax temperature; 0 takes the argmax");
  sample_cmd->add_option("--seed", sample_seed, "Sampling seed");
  sample_cmd->add_option("--prompt", sample_prompt, "File with prompt bytes");
  sample_cmd->add_option("--out", sample_out, "Output file; stdout when omitted");

  // corpus tools
  std::size_t gen_bytes = std::size_t{1} << 20, gen_period = 64;
  std::uint64_t gen_seed = 0;
  fs::path gen_out;
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic periodic byte corpus");
  gen->add_option("--bytes", gen_bytes, "Corpus size");
  gen->add_option("--period", gen_period, "Period length")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Seed for the repeated unit");
  gen->add_option("--out", gen_out, "Output file")->required();

  fs::path info_in;
  auto* info = app.add_subcommand("corpus-info", "Load a raw-byte corpus and print its size and byte histogram summary");
  info->add_option("--corpus", info_in, "Raw-byte corpus")->required();

  fs::path mulaw_in;
  std::optional<fs::path> mulaw_out;
  auto* mulaw = app.add_subcommand("mulaw", "Encode 16-bit little-endian PCM as 8-bit mu-law bytes");
  mulaw->add_option("--in", mulaw_in, "Raw PCM16 input")->required();
  mulaw->add_option("--out", mulaw_out, "Output file; stdout when omitted");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) {
      const FactorizedPattern pattern = parse_pattern_spec(verify_pattern);
      const ValidityReport report = verify_validity(pattern, verify_steps);
      nlohmann::json j = {{"pattern", verify_pattern}, {"steps", verify_steps}, {"valid", report.valid},
                          {"p_used", report.p_used}};
      j["witness"] = report.witness ? nlohmann::json{{"j", report.witness->first}, {"i", report.witness->second}}
                                    : nlohmann::json(nullptr);
      j["max_path_length"] = report.max_path_length ? nlohmann::json(*report.max_path_length) : nlohmann::json(nullptr);
      j["ordered_valid"] = report.ordered_valid ? nlohmann::json(*report.ordered_valid) : nlohmann::json(nullptr);
      std::cout << j.dump() << '\n';
      return report.valid ? 0 : kInvalid;
    }

    if (*viz) {
      const FactorizedPattern pattern = parse_pattern_spec(viz_pattern);
      if (viz_head >= static_cast<int>(pattern.num_heads())) throw ContractError("viz: no such head");
      render_pattern(pattern, viz_out, viz_head);
      return 0;
    }

    if (*bench) {
      bench_opts.strategy = parse_head_strategy(bench_strategy);
      bench_opts.include_dense = !bench_sparse_only;
      const BenchReport report = run_bench(bench_opts);
      std::ofstream file;
      if (bench_out) {
        file.open(*bench_out);
        if (!file) throw std::runtime_error("cannot write " + bench_out->string());
      }
      std::ostream& out = bench_out ? static_cast<std::ostream&>(file) : std::cout;
      for (const auto& s : report.samples) out << s.to_json().dump() << '\n';
      std::cerr << "median ms:";
      for (const char* impl : {"dense", "sparse"})
        if (report.samples.size() && median_ms(report, impl) > 0) std::cerr << ' ' << impl << '=' << median_ms(report, impl);
      if (report.max_abs_diff >= 0) std::cerr << " (cross-check max |diff| " << report.max_abs_diff << ")";
      std::cerr << '\n';
      return 0;
    }

    if (*train_cmd) {
      if (deterministic && nondeterministic) throw ContractError("--deterministic and --nondeterministic conflict");
      Overrides overrides;
      overrides.seed = seed;
      if (deterministic) overrides.deterministic = true;
      if (nondeterministic) overrides.deterministic = false;
      overrides.pattern = pattern_override;
      overrides.sidecar = find_sidecar(corpus_path);
      const RunConfig config = load_run_config(config_path, overrides);
      const auto corpus = load_corpus(corpus_path);

      std::optional<TrainState> start;
      if (resume) {
        const CheckpointFile file = read_checkpoint(*resume);
        if (file.header.at("config") != to_json(config.model))
          throw ContractError("resume: checkpoint model config differs from the run config");
        start = state_from_checkpoint(config.model, file);
      }
      fs::create_directories(run_dir);
      write_json_file(run_dir / "config.json", config.to_json());

      TrainOutputs outputs;
      outputs.run_dir = run_dir;
      outputs.on_step = [&](const StepMetrics& m) {
        if (log_every && (m.step % log_every == 0 || m.step == config.train.total_steps))
          std::cerr << "step " << m.step << " bpb " << m.bpb << " lr " << m.lr << '\n';
      };
      train(config.model, config.train, corpus, outputs, std::move(start));
      return 0;
    }

    if (*eval) {
      const auto [config, params] = load_model(eval_ckpt);
      const Model model(config);
      const auto data = load_corpus(eval_corpus);
      if (min_contexts.empty()) min_contexts.push_back(0);
      for (const std::size_t k : min_contexts) {
        const EvalResult r = evaluate_min_context(model, params, data, k);
        std::cout << nlohmann::json{{"min_context", k}, {"bpb", r.bpb}, {"scored", r.scored}, {"windows", r.windows}}.dump()
                  << '\n';
      }
      return 0;
    }

    if (*sample_cmd) {
      const auto [config, params] = load_model(sample_ckpt);
      const Model model(config);
      std::vector<std::uint8_t> prompt;
      if (sample_prompt) prompt = load_corpus(*sample_prompt);
      const std::size_t length = sample_length ? sample_length : config.context;
      write_bytes(sample_out, sample(model, params, length, temperature, sample_seed, prompt));
      return 0;
    }

    if (*gen) {
      save_corpus(gen_out, periodic_corpus(gen_bytes, gen_period, gen_seed));
      return 0;
    }

    if (*info) {
      const auto data = load_corpus(info_in);
      const std::set<std::uint8_t> distinct(data.begin(), data.end());
      std::cout << nlohmann::json{{"bytes", data.size()}, {"distinct", distinct.size()}}.dump() << '\n';
      return 0;
    }

    if (*mulaw) {
      const auto pcm = load_corpus(mulaw_in);
      write_bytes(mulaw_out, mulaw_encode_pcm16(pcm));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  }
  return 0;
}
