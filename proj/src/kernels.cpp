// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/kernels.hpp"

#include <algorithm>

namespace sparse_attn::kernels {

void gemm(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, Scalar{0});
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* crow = c + i * n;
    const Scalar* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar av = arow[p];
      if (av == Scalar{0}) continue;
      const Scalar* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const Scalar* arow = a + i * k;
    Scalar* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Scalar v = dot(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + v : v;
    }
  }
}

void gemm_tn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, Scalar{0});
  for (std::size_t p = 0; p < k; ++p) {
    const Scalar* arow = a + p * m;
    const Scalar* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Scalar av = arow[i];
      if (av == Scalar{0}) continue;
      Scalar* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace sparse_attn::kernels
