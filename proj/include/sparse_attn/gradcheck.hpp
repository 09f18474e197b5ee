// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient oracle. Intended for 64-bit builds.

#pragma once

#include <functional>

#include "sparse_attn/tensor.hpp"

namespace sparse_attn {

using ScalarFn = std::function<Scalar(const Tensor&)>;

/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate i.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, Scalar eps = Scalar(1e-5));

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor), taken over the whole tensor.
Scalar relative_error(const Tensor& analytic, const Tensor& numeric, Scalar floor = Scalar(1e-12));

}  // namespace sparse_attn
