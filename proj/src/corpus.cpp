// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>

#include "sparse_attn/rng.hpp"
#include "sparse_attn/tensor.hpp"

namespace sparse_attn {

std::vector<std::uint8_t> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw ContractError("corpus too small: " + path.string() + " is empty");
  return bytes;
}

void save_corpus(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::uint8_t> periodic_corpus(std::size_t bytes, std::size_t period, std::uint64_t seed) {
  if (period == 0) throw ContractError("period must be positive");
  std::mt19937_64 rng(stream_seed(seed, "corpus"));
  std::vector<std::uint8_t> unit(period);
  if (period <= 256) {
    std::vector<std::uint8_t> values(256);
    std::iota(values.begin(), values.end(), 0);
    for (std::size_t k = 256; k > 1; --k) std::swap(values[k - 1], values[rng() % k]);
    std::copy_n(values.begin(), period, unit.begin());
  } else {
    for (auto& b : unit) b = static_cast<std::uint8_t>(rng() & 0xFF);
  }
  std::vector<std::uint8_t> out(bytes);
  for (std::size_t i = 0; i < bytes; ++i) out[i] = unit[i % period];
  return out;
}

std::uint8_t mulaw_encode(double x) {
  x = std::clamp(x, -1.0, 1.0);
  const double y = std::copysign(std::log1p(kMuLaw * std::abs(x)) / std::log1p(static_cast<double>(kMuLaw)), x);
  const double code = std::floor((y + 1.0) / 2.0 * 256.0);
  return static_cast<std::uint8_t>(std::clamp(code, 0.0, 255.0));
}

double mulaw_decode(std::uint8_t code) {
  const double y = (static_cast<double>(code) + 0.5) / 256.0 * 2.0 - 1.0;
  return std::copysign((std::pow(1.0 + kMuLaw, std::abs(y)) - 1.0) / kMuLaw, y);
}

std::vector<std::uint8_t> mulaw_encode_pcm16(std::span<const std::uint8_t> pcm) {
  if (pcm.size() % 2 != 0) throw ContractError("16-bit PCM input has an odd byte count");
  std::vector<std::uint8_t> out(pcm.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto raw = static_cast<std::int16_t>(static_cast<std::uint16_t>(pcm[2 * i] | (pcm[2 * i + 1] << 8)));
    out[i] = mulaw_encode(static_cast<double>(raw) / 32768.0);
  }
  return out;
}

}  // namespace sparse_attn
