// Copyright 2026 The sparse-attn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors. The element type is fixed per build: the library is
// compiled once with SPARSE_ATTN_DOUBLE (oracle and gradient tests) and once
// without it (training and benchmarks).

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse_attn {

#ifdef SPARSE_ATTN_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::size_t>;
using TensorId = std::uint64_t;

/// Shape or rank disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (empty softmax row, bad range...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A value became NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Reference-counted handle to an immutable-by-convention buffer.
///
/// Copies share storage. Operations always allocate fresh outputs; in-place
/// mutation through mutable_data() is reserved for buffers under
/// construction and for optimizer updates between tape lifetimes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar value);
  static Tensor scalar(Scalar value);
  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);
  static Tensor vector(std::initializer_list<Scalar> values);

  bool defined() const { return impl_ != nullptr; }
  TensorId id() const;

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Scalar> data() const;
  std::span<Scalar> mutable_data();
  const Scalar* row(std::size_t r) const { return data().data() + r * cols(); }

  Scalar item() const;
  Scalar operator[](std::size_t flat) const { return data()[flat]; }
  Scalar at(std::size_t r, std::size_t c) const;

  /// Deep copy with a fresh id.
  Tensor clone() const;
  bool all_finite() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<Scalar> values;
    TensorId id = 0;
  };
  std::shared_ptr<Storage> impl_;
};

/// Bitwise equality of shape and contents.
bool bitwise_equal(const Tensor& a, const Tensor& b);
Scalar max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace sparse_attn
