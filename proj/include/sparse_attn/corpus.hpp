// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte corpora: raw file I/O, a synthetic periodic generator and 8-bit mu-law
// companding for 16-bit PCM audio.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sparse_attn {

/// Raw bytes of a file, verbatim. Throws std::runtime_error when unreadable
/// and ContractError("corpus too small") when empty.
std::vector<std::uint8_t> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// `bytes` bytes repeating one random period. Periods up to 256 use distinct
/// byte values, so each byte determines its successor.
std::vector<std::uint8_t> periodic_corpus(std::size_t bytes, std::size_t period, std::uint64_t seed);

inline constexpr int kMuLaw = 255;

/// Continuous mu-law companding of x in [-1, 1] quantised to 8 bits.
std::uint8_t mulaw_encode(double x);
/// Centre of the quantisation cell of `code`.
double mulaw_decode(std::uint8_t code);
/// Little-endian signed 16-bit PCM to mu-law bytes.
std::vector<std::uint8_t> mulaw_encode_pcm16(std::span<const std::uint8_t> pcm);

}  // namespace sparse_attn
