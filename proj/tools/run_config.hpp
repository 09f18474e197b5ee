// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration for the command-line tool: a JSON file with "model",
// "train" and "pattern" sections plus command-line overrides.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "sparse_attn/model.hpp"
#include "sparse_attn/training.hpp"

namespace sparse_attn::cli {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  nlohmann::json to_json() const;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<bool> deterministic;
  std::optional<std::string> pattern;  // kind:n[:l[:c]]
  /// Raw-byte image sidecar: {"height", "width", "channels"}.
  std::optional<std::filesystem::path> sidecar;
};

/// The "pattern" section accepts kind, stride, summary, strategy and block;
/// it may not repeat keys already present in "model".
RunConfig resolve_run_config(const nlohmann::json& file, const Overrides& overrides);
RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides);

/// Model keys for a "kind:n[:l[:c]]" pattern spec (sets context to n).
nlohmann::json pattern_spec_keys(const std::string& spec);

/// `<corpus>.meta.json` when it exists.
std::optional<std::filesystem::path> find_sidecar(const std::filesystem::path& corpus);

}  // namespace sparse_attn::cli
