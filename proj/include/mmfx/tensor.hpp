// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmfx/rng.hpp"

namespace mmfx {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

namespace detail {
struct TensorImpl;
}

/// Dense row-major array of doubles with an optional gradient buffer and a
/// link into the reverse-mode graph that produced it.
///
/// A Tensor is a cheap handle: copies share storage. Use clone() for a
/// deep copy and detach() for a copy without graph linkage.
class Tensor {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false);

  /// Builds the result of a differentiable op. When any input requires a
  /// gradient the result is linked to the inputs and `backward` is invoked
  /// with the upstream gradient during Tensor::backward().
  static Tensor from_op(Shape shape, std::vector<double> data,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad() const;
  /// Allocates (or resets) the gradient buffer to zeros.
  void zero_grad();
  /// Drops the gradient buffer.
  void clear_grad();
  /// Adds `values` into the gradient buffer, allocating it on first use.
  void accumulate_grad(std::span<const double> values) const;

  bool is_leaf() const;
  /// Deep copy of data, no graph linkage, same requires_grad flag.
  Tensor clone() const;
  /// Shares no storage and carries no graph; requires_grad is false.
  Tensor detach() const;

  /// Reverse-mode sweep from a scalar. Gradients accumulate additively.
  void backward() const;

  ConstMatrixMap matrix() const;
  MatrixMap mutable_matrix();

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

/// Elementwise sum. `b` may also have a shape equal to a trailing suffix of
/// `a`'s shape, in which case it is repeated over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor tanh(const Tensor& a);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Matrix product over the last two axes. `a` is [..., m, k]; `b` is either
/// [k, n] (shared across the leading axes of `a`) or [..., k, n] with the
/// same leading axes as `a`.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x · weightᵀ for x [..., in] and weight [out, in].
Tensor linear(const Tensor& x, const Tensor& weight);

/// Swaps the last two axes.
Tensor transpose(const Tensor& a);

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
/// [b, s, h, e] -> [b, h, s, e]; the permutation is its own inverse.
Tensor swap_axes_1_2(const Tensor& a);
/// Concatenates along the last axis; leading axes must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);
/// Mean over axis 1 of a rank-3 tensor: [b, s, d] -> [b, d].
Tensor mean_axis1(const Tensor& a);
/// Rows of `table` [v, d] gathered by `ids`; result shape is `index_shape`
/// followed by d.
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& index_shape);

// ---------------------------------------------------------------------------
// Normalization and regularization
// ---------------------------------------------------------------------------

Tensor softmax_last(const Tensor& a);

inline constexpr double kRmsNormEps = 1e-5;
/// Each slice along the last axis divided by sqrt(mean(x²) + eps), then
/// multiplied elementwise by `gain`.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = kRmsNormEps);

/// Inverted dropout. Identity when `training` is false or `rate` is zero.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace mmfx
