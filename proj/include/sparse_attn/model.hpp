// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level decoder: token and positional embeddings, a stack of
// pre-activation residual blocks (attention branch, feed-forward branch), a
// final normalisation and the output projection.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sparse_attn/attention.hpp"
#include "sparse_attn/patterns.hpp"
#include "sparse_attn/tape.hpp"

namespace sparse_attn {

enum class PositionMode {
  attention,  // (row, column) in a matrix of width equal to the stride
  data,       // one coordinate per axis of data_shape, row-major
};

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t width = 64;
  std::size_t heads = 2;
  std::size_t vocab = 256;
  std::size_t context = 256;
  PatternKind pattern = PatternKind::strided;
  std::int32_t stride = 0;        // 0 selects ceil(sqrt(context))
  std::int32_t summary = 1;       // fixed pattern only
  HeadStrategy strategy = HeadStrategy::interleaved;
  PositionMode positions = PositionMode::attention;
  std::vector<std::size_t> data_shape;  // data mode, e.g. {rows, cols, channels}
  double ff_mult = 4.0;
  double dropout = 0.0;
  bool half_qk = false;
  bool checkpoint = true;
  std::int32_t block = kDefaultBlock;

  std::int32_t resolved_stride() const;
  FactorizedPattern make_pattern(std::int32_t length) const;
  std::size_t ff_width() const;
  /// Number of positional tables.
  std::size_t position_tables() const;
  /// Row count of each positional table.
  std::vector<std::size_t> position_table_rows() const;
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
/// Keys missing from `j` keep their defaults; unknown keys throw ContractError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Positional coordinates of position i, one per table.
std::vector<std::int32_t> position_coordinates(const ModelConfig& config, std::size_t i);

struct LayerParams {
  Tensor norm1_gain, norm1_bias;
  AttentionParams attention;
  Tensor norm2_gain, norm2_bias;
  Tensor w1, b1, w2, b2;
};

struct ModelParams {
  Tensor token_embedding;                // vocab x d
  std::vector<Tensor> position_tables;   // rows_j x d
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor w_out;                          // d x vocab

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::size_t parameter_count() const;
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Branch outputs of every residual block, for inspection.
struct ResidualTrace {
  Tensor h0;
  std::vector<Tensor> branches;  // a_0, b_0, a_1, b_1, ...
  Tensor h_final;                // before the final norm
};

struct ForwardOptions {
  bool training = false;           // enables dropout
  std::uint64_t dropout_seed = 0;
  bool dense = false;              // dense attention instead of the block-sparse kernel
  bool checkpoint = true;          // recompute residual blocks during backward
  ResidualTrace* trace = nullptr;  // forces the non-checkpointed path
  KernelCounters* counters = nullptr;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// Sum of token and positional embeddings of the (already shifted) inputs.
  Tensor embed(Tape& tape, const ModelParams& params, std::span<const std::int32_t> inputs) const;
  /// Residual stack, final norm and output projection applied to embeddings.
  Tensor forward_embedded(Tape& tape, const ModelParams& params, const Tensor& h0, const ForwardOptions& options = {}) const;
  /// Logits [len x vocab]; row i scores the token that follows inputs[0..i].
  Tensor forward(Tape& tape, const ModelParams& params, std::span<const std::int32_t> inputs,
                 const ForwardOptions& options = {}) const;

  /// Connectivity of each layer for a sequence of `length`.
  const HeadAssignment& assignment(std::size_t layer, std::size_t length) const;
  const HeadLayouts& layouts(std::size_t layer, std::size_t length) const;

 private:
  struct LengthPlan {
    std::vector<HeadAssignment> assignments;
    std::vector<HeadLayouts> layouts;
  };
  const LengthPlan& plan(std::size_t length) const;

  ModelConfig config_;
  mutable std::map<std::size_t, LengthPlan> plans_;
};

/// One residual block: H + a(H) + b(H) with a = dropout(attn(norm(H))) and
/// b = dropout(ff(norm(H + a))). `a_out`/`b_out` receive the branches when set.
Tensor resblock(Tape& tape, const Tensor& h, const LayerParams& layer, const std::vector<RowSets>* dense_rows,
                const HeadLayouts* layouts, double dropout, std::uint64_t seed, KernelCounters* counters = nullptr,
                Tensor* a_out = nullptr, Tensor* b_out = nullptr);

/// Teacher-forcing inputs for a window: BOS (0) followed by window[0..n-2].
std::vector<std::int32_t> shift_inputs(std::span<const std::uint8_t> window);
std::vector<std::int32_t> as_targets(std::span<const std::uint8_t> window);

/// Mean -log2 p(target) over positions.
Tensor loss_bits_per_byte(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets);

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

/// Layout: "SPTRCKPT", u32 version, u64 header length, header JSON text,
/// u32 record count, then per record: u32 name length, name, u8 dtype tag
/// (1 = f32, 2 = f64), u32 rank, u64 dims, raw little-endian values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFile {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> records;

  const Tensor& tensor(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

/// Header {"config": ...} plus one record per named parameter.
CheckpointFile model_checkpoint(const ModelConfig& config, const ModelParams& params);
/// Rebuild parameters for `config` from the named records.
ModelParams params_from_checkpoint(const ModelConfig& config, const CheckpointFile& file);

}  // namespace sparse_attn
