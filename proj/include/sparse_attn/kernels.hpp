// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Raw row-major matrix kernels shared by the differentiable ops. Loop orders
// are fixed so results are reproducible bit for bit.

#pragma once

#include <cstddef>

#include "sparse_attn/tensor.hpp"

namespace sparse_attn::kernels {

/// c[m x n] (+)= a[m x k] * b[k x n]
void gemm(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate = false);
/// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
/// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);

inline Scalar dot(const Scalar* a, const Scalar* b, std::size_t n) {
  Scalar s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(Scalar alpha, const Scalar* x, Scalar* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace sparse_attn::kernels
