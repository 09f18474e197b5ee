// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "sparse_attn/checkpoint.hpp"
#include "sparse_attn/ops.hpp"
#include "sparse_attn/rng.hpp"

namespace sparse_attn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::int32_t ModelConfig::resolved_stride() const {
  if (stride > 0) return stride;
  return static_cast<std::int32_t>(std::ceil(std::sqrt(static_cast<double>(context))));
}

FactorizedPattern ModelConfig::make_pattern(std::int32_t length) const {
  const auto n = static_cast<std::int32_t>(context);
  const auto l = resolved_stride();
  FactorizedPattern base = [&] {
    switch (pattern) {
      case PatternKind::strided: return strided_pattern(n, l);
      case PatternKind::fixed: return fixed_pattern(n, l, summary);
      case PatternKind::full: return full_pattern(n);
      case PatternKind::local_only: return local_only_pattern(n, l);
      case PatternKind::custom: break;
    }
    throw ContractError("model: custom patterns are not configurable");
  }();
  if (length == n) return base;
  if (length < 1 || length > n) throw ContractError("model: sequence length outside [1, context]");
  // Rules are closed-form, so a shorter sequence reuses them unchanged.
  std::vector<PatternHead> heads;
  for (std::size_t m = 0; m < base.num_heads(); ++m) heads.push_back(base.head(m));
  return FactorizedPattern(base.kind(), length, base.stride(), base.summary_width(), std::move(heads));
}

std::size_t ModelConfig::ff_width() const { return static_cast<std::size_t>(ff_mult * static_cast<double>(width)); }

std::size_t ModelConfig::position_tables() const { return position_table_rows().size(); }

std::vector<std::size_t> ModelConfig::position_table_rows() const {
  if (positions == PositionMode::data) return data_shape;
  const auto l = static_cast<std::size_t>(resolved_stride());
  return {(context + l - 1) / l, l};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("model config: " + msg); };
  if (layers < 1) fail("layers must be >= 1");
  if (vocab < 2) fail("vocab must be >= 2");
  if (context < 1) fail("context must be >= 1");
  if (width < 1 || heads < 1 || width % heads != 0) fail("width must be a positive multiple of heads");
  if (ff_mult != 2.0 && ff_mult != 4.0) fail("ff_mult must be 2 or 4");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (block < 1 || block > 64) fail("block must be in [1, 64]");
  if (pattern == PatternKind::custom) fail("pattern must be strided, fixed, full or local");
  const auto l = resolved_stride();
  if (l < 1 || static_cast<std::size_t>(l) > context) fail("stride must be in [1, context]");
  if (pattern == PatternKind::fixed && (summary < 1 || summary > l)) fail("summary must be in [1, stride]");
  if (half_qk && (width / heads) % 2 != 0) fail("half_qk needs an even head width");
  if (positions == PositionMode::data) {
    if (data_shape.empty()) fail("data positions need data_shape");
    std::size_t total = 1;
    for (auto s : data_shape) {
      if (s == 0) fail("data_shape entries must be positive");
      total *= s;
    }
    if (total < context) fail("data_shape covers fewer positions than the context");
  }
  if (strategy == HeadStrategy::multihead && heads % make_pattern(static_cast<std::int32_t>(context)).num_heads() != 0) {
    fail("multihead strategy needs heads divisible by the pattern head count");
  }
}

namespace {

PatternKind parse_pattern_kind(const std::string& name) {
  if (name == "strided") return PatternKind::strided;
  if (name == "fixed") return PatternKind::fixed;
  if (name == "full") return PatternKind::full;
  if (name == "local" || name == "local_only") return PatternKind::local_only;
  throw ContractError("model config: unknown pattern '" + name + "'");
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["layers"] = c.layers;
  j["width"] = c.width;
  j["heads"] = c.heads;
  j["vocab"] = c.vocab;
  j["context"] = c.context;
  j["pattern"] = c.pattern == PatternKind::local_only ? "local" : std::string(to_string(c.pattern));
  j["stride"] = c.stride;
  j["summary"] = c.summary;
  j["strategy"] = std::string(to_string(c.strategy));
  j["positions"] = c.positions == PositionMode::data ? "data" : "attention";
  j["data_shape"] = c.data_shape;
  j["ff_mult"] = c.ff_mult;
  j["dropout"] = c.dropout;
  j["half_qk"] = c.half_qk;
  j["checkpoint"] = c.checkpoint;
  j["block"] = c.block;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("model config must be an object");
  static const std::set<std::string> known = {"layers", "width", "heads", "vocab", "context", "pattern",
                                              "stride", "summary", "strategy", "positions", "data_shape",
                                              "ff_mult", "dropout", "half_qk", "checkpoint", "block"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ContractError("model config: unknown key '" + key + "'");
  ModelConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.width = j.value("width", c.width);
    c.heads = j.value("heads", c.heads);
    c.vocab = j.value("vocab", c.vocab);
    c.context = j.value("context", c.context);
    if (j.contains("pattern")) c.pattern = parse_pattern_kind(j["pattern"].get<std::string>());
    c.stride = j.value("stride", c.stride);
    c.summary = j.value("summary", c.summary);
    if (j.contains("strategy")) c.strategy = parse_head_strategy(j["strategy"].get<std::string>());
    if (j.contains("positions")) {
      const auto mode = j["positions"].get<std::string>();
      if (mode == "attention") c.positions = PositionMode::attention;
      else if (mode == "data") c.positions = PositionMode::data;
      else throw ContractError("model config: positions must be 'attention' or 'data'");
    }
    c.data_shape = j.value("data_shape", c.data_shape);
    c.ff_mult = j.value("ff_mult", c.ff_mult);
    c.dropout = j.value("dropout", c.dropout);
    c.half_qk = j.value("half_qk", c.half_qk);
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.block = j.value("block", c.block);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::int32_t> position_coordinates(const ModelConfig& config, std::size_t i) {
  if (config.positions == PositionMode::attention) {
    const auto l = static_cast<std::size_t>(config.resolved_stride());
    return {static_cast<std::int32_t>(i / l), static_cast<std::int32_t>(i % l)};
  }
  const auto& dims = config.data_shape;
  std::vector<std::int32_t> coords(dims.size());
  for (std::size_t a = dims.size(); a-- > 0;) {
    coords[a] = static_cast<std::int32_t>(i % dims[a]);
    i /= dims[a];
  }
  return coords;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  for (std::size_t j = 0; j < position_tables.size(); ++j)
    out.emplace_back("position." + std::to_string(j), &position_tables[j]);
  for (std::size_t r = 0; r < layers.size(); ++r) {
    auto& L = layers[r];
    const std::string p = "layer." + std::to_string(r) + ".";
    out.emplace_back(p + "norm1.gain", &L.norm1_gain);
    out.emplace_back(p + "norm1.bias", &L.norm1_bias);
    out.emplace_back(p + "attn.w_q", &L.attention.w_q);
    out.emplace_back(p + "attn.w_k", &L.attention.w_k);
    out.emplace_back(p + "attn.w_v", &L.attention.w_v);
    out.emplace_back(p + "attn.w_p", &L.attention.w_p);
    out.emplace_back(p + "norm2.gain", &L.norm2_gain);
    out.emplace_back(p + "norm2.bias", &L.norm2_bias);
    out.emplace_back(p + "ff.w1", &L.w1);
    out.emplace_back(p + "ff.b1", &L.b1);
    out.emplace_back(p + "ff.w2", &L.w2);
    out.emplace_back(p + "ff.b2", &L.b2);
  }
  out.emplace_back("final.gain", &final_gain);
  out.emplace_back("final.bias", &final_bias);
  out.emplace_back("w_out", &w_out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [_, t] : named()) total += t->size();
  return total;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.width, v = config.vocab, f = config.ff_width();
  const double depth_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.layers));
  const auto rows = config.position_table_rows();

  ModelParams p;
  p.token_embedding = Tensor::zeros({v, d});
  for (auto r : rows) p.position_tables.push_back(Tensor::zeros({r, d}));
  p.layers.resize(config.layers);
  for (auto& L : p.layers) {
    L.norm1_gain = Tensor::full({d}, 1);
    L.norm1_bias = Tensor::zeros({d});
    L.norm2_gain = Tensor::full({d}, 1);
    L.norm2_bias = Tensor::zeros({d});
    auto& a = L.attention;
    a.n_heads = config.heads;
    AttentionParams::shapes(d, config.heads, config.half_qk, a.qk_dim, a.v_dim);
    a.w_q = Tensor::zeros({d, a.n_heads * a.qk_dim});
    a.w_k = Tensor::zeros({d, a.n_heads * a.qk_dim});
    a.w_v = Tensor::zeros({d, a.n_heads * a.v_dim});
    a.w_p = Tensor::zeros({a.n_heads * a.v_dim, d});
    L.w1 = Tensor::zeros({d, f});
    L.b1 = Tensor::zeros({f});
    L.w2 = Tensor::zeros({f, d});
    L.b2 = Tensor::zeros({d});
  }
  p.final_gain = Tensor::full({d}, 1);
  p.final_bias = Tensor::zeros({d});
  p.w_out = Tensor::zeros({d, v});

  const std::uint64_t init_seed = stream_seed(seed, "init");
  auto fill = [&](const std::string& name, Tensor& t, double std_dev) {
    std::mt19937_64 rng(derive_seed(init_seed, fnv1a(name)));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (auto& x : t.mutable_data()) x = static_cast<Scalar>(dist(rng));
  };
  const double base = 0.125;
  for (auto& [name, t] : p.named()) {
    if (name == "token_embedding") {
      fill(name, *t, base / std::sqrt(static_cast<double>(d)));
    } else if (name.rfind("position.", 0) == 0) {
      fill(name, *t, base / std::sqrt(static_cast<double>(d * rows.size())));
    } else if (name.ends_with("attn.w_q") || name.ends_with("attn.w_k") || name.ends_with("attn.w_v") ||
               name.ends_with("ff.w1")) {
      fill(name, *t, base / std::sqrt(static_cast<double>(t->rows())));
    } else if (name.ends_with("attn.w_p") || name.ends_with("ff.w2")) {
      fill(name, *t, base / std::sqrt(static_cast<double>(t->rows())) * depth_scale);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

Tensor resblock(Tape& tape, const Tensor& h, const LayerParams& layer, const std::vector<RowSets>* dense_rows,
                const HeadLayouts* layouts, double dropout_rate, std::uint64_t seed, KernelCounters* counters,
                Tensor* a_out, Tensor* b_out) {
  const auto rate = static_cast<Scalar>(dropout_rate);
  const Tensor normed = layer_norm(tape, h, layer.norm1_gain, layer.norm1_bias);
  const Tensor att = dense_rows ? dense_attention(tape, normed, layer.attention, *dense_rows)
                                : sparse_attention(tape, normed, layer.attention, *layouts, counters);
  const Tensor a = dropout(tape, att, rate, derive_seed(seed, 0));
  const Tensor ha = add(tape, h, a);
  const Tensor normed2 = layer_norm(tape, ha, layer.norm2_gain, layer.norm2_bias);
  const Tensor hidden = gelu(tape, add_bias(tape, matmul(tape, normed2, layer.w1), layer.b1));
  const Tensor ff = add_bias(tape, matmul(tape, hidden, layer.w2), layer.b2);
  const Tensor b = dropout(tape, ff, rate, derive_seed(seed, 1));
  if (a_out) *a_out = a;
  if (b_out) *b_out = b;
  return add(tape, ha, b);
}

Model::Model(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

const Model::LengthPlan& Model::plan(std::size_t length) const {
  auto it = plans_.find(length);
  if (it != plans_.end()) return it->second;
  LengthPlan plan;
  const auto pattern = config_.make_pattern(static_cast<std::int32_t>(length));
  // Interleaved layers repeat with period p; other strategies use one plan.
  const std::size_t period = config_.strategy == HeadStrategy::interleaved ? pattern.num_heads() : 1;
  for (std::size_t r = 0; r < config_.layers; ++r) {
    if (r < period) {
      plan.assignments.push_back(apply_head_strategy(pattern, config_.strategy, r, config_.heads));
      plan.layouts.push_back(compile_head_layouts(plan.assignments.back(), config_.block));
    } else {
      plan.assignments.push_back(plan.assignments[r % period]);
      plan.layouts.push_back(plan.layouts[r % period]);
    }
  }
  return plans_.emplace(length, std::move(plan)).first->second;
}

const HeadAssignment& Model::assignment(std::size_t layer, std::size_t length) const {
  return plan(length).assignments.at(layer);
}

const HeadLayouts& Model::layouts(std::size_t layer, std::size_t length) const { return plan(length).layouts.at(layer); }

Tensor Model::embed(Tape& tape, const ModelParams& params, std::span<const std::int32_t> inputs) const {
  const std::size_t n = inputs.size();
  if (n == 0 || n > config_.context) {
    throw ContractError("model: input length " + std::to_string(n) + " outside [1, " + std::to_string(config_.context) + "]");
  }
  for (auto t : inputs) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab) {
      throw ContractError("model: token " + std::to_string(t) + " outside the vocabulary");
    }
  }
  Tensor h = gather_rows(tape, params.token_embedding, inputs);
  const std::size_t tables = params.position_tables.size();
  std::vector<std::vector<std::int32_t>> coords(tables, std::vector<std::int32_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = position_coordinates(config_, i);
    for (std::size_t t = 0; t < tables; ++t) coords[t][i] = c[t];
  }
  for (std::size_t t = 0; t < tables; ++t) h = add(tape, h, gather_rows(tape, params.position_tables[t], coords[t]));
  return h;
}

Tensor Model::forward_embedded(Tape& tape, const ModelParams& params, const Tensor& h0,
                               const ForwardOptions& options) const {
  const std::size_t n = h0.rows();
  if (params.layers.size() != config_.layers) throw DimensionError("model: parameter layer count differs from config");
  const double rate = options.training ? config_.dropout : 0.0;
  const bool checkpointed = options.checkpoint && config_.checkpoint && !options.trace && tape.recording();
  if (options.trace) {
    options.trace->h0 = h0;
    options.trace->branches.clear();
  }
  Tensor h = h0;
  for (std::size_t r = 0; r < config_.layers; ++r) {
    const LayerParams& layer = params.layers[r];
    const std::uint64_t seed = derive_seed(options.dropout_seed, r);
    std::shared_ptr<const std::vector<RowSets>> rows;
    if (options.dense) rows = std::make_shared<const std::vector<RowSets>>(head_rows(assignment(r, n)));
    const HeadLayouts* layer_layouts = options.dense ? nullptr : &layouts(r, n);
    if (!checkpointed) {
      Tensor a, b;
      h = resblock(tape, h, layer, rows.get(), layer_layouts, rate, seed, options.counters,
                   options.trace ? &a : nullptr, options.trace ? &b : nullptr);
      if (options.trace) {
        options.trace->branches.push_back(a);
        options.trace->branches.push_back(b);
      }
      continue;
    }
    // Counters only see the first evaluation, not the backward replay.
    auto first_call = std::make_shared<bool>(true);
    const auto& at = layer.attention;
    SegmentFn f = [rows, layer_layouts, rate, seed, first_call, counters = options.counters, heads = at.n_heads,
                   qk = at.qk_dim, vd = at.v_dim](Tape& t, std::span<const Tensor> in) {
      LayerParams L;
      L.norm1_gain = in[1];
      L.norm1_bias = in[2];
      L.attention = AttentionParams{in[3], in[4], in[5], in[6], heads, qk, vd};
      L.norm2_gain = in[7];
      L.norm2_bias = in[8];
      L.w1 = in[9];
      L.b1 = in[10];
      L.w2 = in[11];
      L.b2 = in[12];
      KernelCounters* c = *first_call ? counters : nullptr;
      *first_call = false;
      return resblock(t, in[0], L, rows.get(), layer_layouts, rate, seed, c);
    };
    h = checkpoint_segment(tape, std::move(f),
                           {h, layer.norm1_gain, layer.norm1_bias, at.w_q, at.w_k, at.w_v, at.w_p, layer.norm2_gain,
                            layer.norm2_bias, layer.w1, layer.b1, layer.w2, layer.b2});
  }
  if (options.trace) options.trace->h_final = h;
  const Tensor normed = layer_norm(tape, h, params.final_gain, params.final_bias);
  return matmul(tape, normed, params.w_out);
}

Tensor Model::forward(Tape& tape, const ModelParams& params, std::span<const std::int32_t> inputs,
                      const ForwardOptions& options) const {
  return forward_embedded(tape, params, embed(tape, params, inputs), options);
}

std::vector<std::int32_t> shift_inputs(std::span<const std::uint8_t> window) {
  std::vector<std::int32_t> out(window.size());
  if (out.empty()) return out;
  out[0] = 0;
  for (std::size_t i = 1; i < window.size(); ++i) out[i] = window[i - 1];
  return out;
}

std::vector<std::int32_t> as_targets(std::span<const std::uint8_t> window) {
  return std::vector<std::int32_t>(window.begin(), window.end());
}

Tensor loss_bits_per_byte(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets) {
  return mean_nll_bits(tape, logits, targets);
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'P', 'T', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kTagF32 = 1;
constexpr std::uint8_t kTagF64 = 2;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ContractError("checkpoint: truncated file");
  return value;
}

std::string get_string(std::istream& in, std::size_t len) {
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw ContractError("checkpoint: truncated file");
  return s;
}

}  // namespace

const Tensor& CheckpointFile::tensor(const std::string& name) const {
  for (const auto& [n, t] : records)
    if (n == name) return t;
  throw ContractError("checkpoint: no record named '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = file.header.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.records.size()));
  for (const auto& [name, t] : file.records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, sizeof(Scalar) == 4 ? kTagF32 : kTagF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto dim : t.shape()) put<std::uint64_t>(out, dim);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ContractError("checkpoint: bad magic in " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw ContractError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointFile file;
  const auto header_len = get<std::uint64_t>(in);
  file.header = nlohmann::json::parse(get_string(in, header_len));
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t r = 0; r < count; ++r) {
    std::string name = get_string(in, get<std::uint32_t>(in));
    const auto tag = get<std::uint8_t>(in);
    if (tag != kTagF32 && tag != kTagF64) throw ContractError("checkpoint: unknown dtype tag in record " + name);
    Shape shape(get<std::uint32_t>(in));
    for (auto& dim : shape) dim = get<std::uint64_t>(in);
    std::vector<Scalar> values(shape_size(shape));
    if (tag == kTagF32) {
      for (auto& x : values) x = static_cast<Scalar>(get<float>(in));
    } else {
      for (auto& x : values) x = static_cast<Scalar>(get<double>(in));
    }
    file.records.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return file;
}

CheckpointFile model_checkpoint(const ModelConfig& config, const ModelParams& params) {
  CheckpointFile file;
  file.header["config"] = to_json(config);
  for (const auto& [name, t] : params.named()) file.records.emplace_back(name, *t);
  return file;
}

ModelParams params_from_checkpoint(const ModelConfig& config, const CheckpointFile& file) {
  ModelParams params = init_params(config, 0);
  for (auto& [name, t] : params.named()) {
    const Tensor& stored = file.tensor(name);
    if (stored.shape() != t->shape()) {
      throw DimensionError("checkpoint: record " + name + " has shape " + shape_string(stored.shape()) + ", expected " +
                           shape_string(t->shape()));
    }
    *t = stored;
  }
  return params;
}

}  // namespace sparse_attn
