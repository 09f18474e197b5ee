// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <fstream>
#include <set>

namespace sparse_attn::cli {

nlohmann::json RunConfig::to_json() const {
  return {{"model", sparse_attn::to_json(model)}, {"train", sparse_attn::to_json(train)}};
}

nlohmann::json pattern_spec_keys(const std::string& spec) {
  const FactorizedPattern pattern = parse_pattern_spec(spec);
  nlohmann::json keys;
  keys["context"] = pattern.length();
  switch (pattern.kind()) {
    case PatternKind::full:
      keys["pattern"] = "full";
      break;
    case PatternKind::local_only:
      keys["pattern"] = "local";
      keys["stride"] = pattern.stride();
      break;
    case PatternKind::strided:
      keys["pattern"] = "strided";
      keys["stride"] = pattern.stride();
      break;
    case PatternKind::fixed:
      keys["pattern"] = "fixed";
      keys["stride"] = pattern.stride();
      keys["summary"] = pattern.summary_width();
      break;
    default:
      throw ContractError("unsupported pattern spec '" + spec + "'");
  }
  return keys;
}

std::optional<std::filesystem::path> find_sidecar(const std::filesystem::path& corpus) {
  auto path = corpus;
  path += ".meta.json";
  if (std::filesystem::exists(path)) return path;
  return std::nullopt;
}

RunConfig resolve_run_config(const nlohmann::json& file, const Overrides& overrides) {
  if (!file.is_object()) throw ContractError("run config must be a JSON object");
  for (const auto& [key, _] : file.items())
    if (key != "model" && key != "train" && key != "pattern") throw ContractError("run config: unknown section '" + key + "'");

  nlohmann::json model = file.value("model", nlohmann::json::object());
  nlohmann::json train = file.value("train", nlohmann::json::object());
  if (!model.is_object() || !train.is_object()) throw ContractError("run config: sections must be objects");

  if (file.contains("pattern")) {
    const auto& pattern = file.at("pattern");
    if (!pattern.is_object()) throw ContractError("run config: pattern section must be an object");
    static const std::set<std::string> keys = {"kind", "stride", "summary", "strategy", "block"};
    for (const auto& [key, value] : pattern.items()) {
      if (!keys.count(key)) throw ContractError("pattern config: unknown key '" + key + "'");
      const std::string target = key == "kind" ? "pattern" : key;
      if (model.contains(target)) throw ContractError("run config: '" + target + "' set in both model and pattern");
      model[target] = value;
    }
  }
  if (overrides.pattern) model.update(pattern_spec_keys(*overrides.pattern));
  if (overrides.seed) train["seed"] = *overrides.seed;
  if (overrides.deterministic) train["deterministic"] = *overrides.deterministic;
  if (overrides.sidecar) {
    std::ifstream in(*overrides.sidecar);
    if (!in) throw std::runtime_error("cannot read " + overrides.sidecar->string());
    const auto meta = nlohmann::json::parse(in);
    for (const auto& [key, _] : meta.items())
      if (key != "height" && key != "width" && key != "channels") throw ContractError("sidecar: unknown key '" + key + "'");
    model["positions"] = "data";
    model["data_shape"] = {meta.at("height").get<std::size_t>(), meta.at("width").get<std::size_t>(),
                           meta.value("channels", std::size_t{1})};
  }

  RunConfig config{model_config_from_json(model), train_config_from_json(train)};
  config.model.validate();
  config.train.validate();
  return config;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides) {
  nlohmann::json file = nlohmann::json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw std::runtime_error("cannot read config " + path->string());
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ContractError("config " + path->string() + ": " + e.what());
    }
  }
  return resolve_run_config(file, overrides);
}

}  // namespace sparse_attn::cli
