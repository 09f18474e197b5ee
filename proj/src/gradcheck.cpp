// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_attn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sparse_attn {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, Scalar eps) {
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  std::vector<Scalar> grad(x.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Scalar saved = values[i];
    values[i] = saved + eps;
    const Scalar up = f(probe);
    values[i] = saved - eps;
    const Scalar down = f(probe);
    values[i] = saved;
    grad[i] = (up - down) / (Scalar{2} * eps);
  }
  return Tensor(x.shape(), std::move(grad));
}

Scalar relative_error(const Tensor& analytic, const Tensor& numeric, Scalar floor) {
  if (analytic.shape() != numeric.shape()) throw DimensionError("relative_error: shape mismatch");
  Scalar diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const Scalar a = analytic[i], b = numeric[i];
    diff += (a - b) * (a - b);
    na += a * a;
    nb += b * b;
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace sparse_attn
