// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace mmfx {

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  Tensor::BackwardFn backward;
};
}  // namespace detail

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                     " elements, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tracked) {
    out.impl_->requires_grad = true;
    out.impl_->inputs.reserve(inputs.size());
    for (auto& t : inputs) out.impl_->inputs.push_back(t.impl_);
    out.impl_->backward = std::move(backward);
  }
  return out;
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::size() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl().data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + to_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw std::out_of_range("index out of range for " + to_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl().data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }

bool Tensor::has_grad() const { return impl().grad.has_value(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return *impl().grad;
}

std::span<double> Tensor::mutable_grad() const {
  auto& i = impl();
  if (!i.grad) i.grad.emplace(i.data.size(), 0.0);
  return *i.grad;
}

void Tensor::zero_grad() {
  auto& i = impl();
  i.grad.emplace(i.data.size(), 0.0);
}

void Tensor::clear_grad() { impl().grad.reset(); }

void Tensor::accumulate_grad(std::span<const double> values) const {
  auto g = mutable_grad();
  if (values.size() != g.size()) throw ShapeError("gradient length mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

bool Tensor::is_leaf() const { return !impl().backward; }

Tensor Tensor::clone() const { return Tensor(shape(), impl().data, requires_grad()); }

Tensor Tensor::detach() const { return Tensor(shape(), impl().data, false); }

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape()));
  if (!requires_grad()) throw std::logic_error("backward() on a tensor outside the autodiff graph");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& root = *impl_;
  if (!root.grad) root.grad.emplace(1, 0.0);
  (*root.grad)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && node->grad) node->backward(*node->grad);
  }
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix() needs rank 2, got " + to_string(shape()));
  return ConstMatrixMap(impl().data.data(), static_cast<Eigen::Index>(dim(0)), static_cast<Eigen::Index>(dim(1)));
}

MatrixMap Tensor::mutable_matrix() {
  if (rank() != 2) throw ShapeError("mutable_matrix() needs rank 2, got " + to_string(shape()));
  return MatrixMap(impl().data.data(), static_cast<Eigen::Index>(dim(0)), static_cast<Eigen::Index>(dim(1)));
}

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

namespace {

bool is_suffix(const Shape& whole, const Shape& tail) {
  if (tail.size() > whole.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), whole.rbegin());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  auto y = out;
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [a, y = std::move(y), deriv](std::span<const double> g) mutable {
                           if (!a.requires_grad()) return;
                           auto ga = a.mutable_grad();
                           auto x = a.data();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
                         });
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  auto x = a.data();
  auto y = b.data();
  const std::size_t nb = y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % nb];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      const std::size_t nb = gb.size();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      auto y = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto x = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, logistic, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x * logistic(x); },
      [](double x, double) {
        const double s = logistic(x);
        return s + x * s * (1.0 - s);
      });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace {

std::size_t leading(const Shape& s, std::size_t keep) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + keep < s.size(); ++i) n *= s[i];
  return n;
}

ConstMatrixMap cmap(std::span<const double> d, std::size_t offset, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(d.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatrixMap mmap(std::span<double> d, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MatrixMap(d.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  const bool shared_rhs = sb.size() == 2;
  if (sb[sb.size() - 2] != k ||
      (!shared_rhs && (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())))) {
    throw ShapeError("matmul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  }
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  const std::size_t batches = leading(sa, 2);
  std::vector<double> out(batches * m * n);

  if (shared_rhs) {
    mmap(out, 0, batches * m, n).noalias() = cmap(a.data(), 0, batches * m, k) * b.matrix();
  } else {
    for (std::size_t i = 0; i < batches; ++i) {
      mmap(out, i * m * n, m, n).noalias() = cmap(a.data(), i * m * k, m, k) * cmap(b.data(), i * k * n, k, n);
    }
  }

  return Tensor::from_op(std::move(out_shape), std::move(out), {a, b},
                         [a, b, batches, m, k, n, shared_rhs](std::span<const double> g) mutable {
                           if (shared_rhs) {
                             auto gm = cmap(g, 0, batches * m, n);
                             if (a.requires_grad()) {
                               mmap(a.mutable_grad(), 0, batches * m, k).noalias() += gm * b.matrix().transpose();
                             }
                             if (b.requires_grad()) {
                               mmap(b.mutable_grad(), 0, k, n).noalias() +=
                                   cmap(a.data(), 0, batches * m, k).transpose() * gm;
                             }
                             return;
                           }
                           for (std::size_t i = 0; i < batches; ++i) {
                             auto gm = cmap(g, i * m * n, m, n);
                             if (a.requires_grad()) {
                               mmap(a.mutable_grad(), i * m * k, m, k).noalias() +=
                                   gm * cmap(b.data(), i * k * n, k, n).transpose();
                             }
                             if (b.requires_grad()) {
                               mmap(b.mutable_grad(), i * k * n, k, n).noalias() +=
                                   cmap(a.data(), i * m * k, m, k).transpose() * gm;
                             }
                           }
                         });
}

Tensor linear(const Tensor& x, const Tensor& weight) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<double> out(rows * out_dim);
  mmap(out, 0, rows, out_dim).noalias() = cmap(x.data(), 0, rows, in) * weight.matrix().transpose();
  return Tensor::from_op(std::move(out_shape), std::move(out), {x, weight},
                         [x, weight, rows, in, out_dim](std::span<const double> g) mutable {
                           auto gm = cmap(g, 0, rows, out_dim);
                           if (x.requires_grad()) {
                             mmap(x.mutable_grad(), 0, rows, in).noalias() += gm * weight.matrix();
                           }
                           if (weight.requires_grad()) {
                             mmap(weight.mutable_grad(), 0, out_dim, in).noalias() +=
                                 gm.transpose() * cmap(x.data(), 0, rows, in);
                           }
                         });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + to_string(a.shape()));
  const auto& s = a.shape();
  const std::size_t m = s[s.size() - 2];
  const std::size_t n = s.back();
  const std::size_t batches = leading(s, 2);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < batches; ++i) {
    mmap(out, i * m * n, n, m) = cmap(a.data(), i * m * n, m, n).transpose();
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {a}, [a, batches, m, n](std::span<const double> g) mutable {
    if (!a.requires_grad()) return;
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < batches; ++i) mmap(ga, i * m * n, m, n) += cmap(g, i * m * n, n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), {a}, [a](std::span<const double> g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g);
  });
}

Tensor swap_axes_1_2(const Tensor& a) {
  if (a.rank() != 4) throw ShapeError("swap_axes_1_2: needs rank 4, got " + to_string(a.shape()));
  const auto& s = a.shape();
  const std::size_t b = s[0], p = s[1], q = s[2], e = s[3];
  auto src = a.data();
  std::vector<double> out(a.size());
  // out[b][j][i][:] = in[b][i][j][:]
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j)
        std::copy_n(src.data() + ((bi * p + i) * q + j) * e, e, out.data() + ((bi * q + j) * p + i) * e);
  return Tensor::from_op({b, q, p, e}, std::move(out), {a}, [a, b, p, q, e](std::span<const double> g) mutable {
    if (!a.requires_grad()) return;
    auto ga = a.mutable_grad();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
          const double* from = g.data() + ((bi * q + j) * p + i) * e;
          double* to = ga.data() + ((bi * p + i) * q + j) * e;
          for (std::size_t t = 0; t < e; ++t) to[t] += from[t];
        }
  });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_last: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  }
  const std::size_t na = sa.back();
  const std::size_t nb = sb.back();
  const std::size_t rows = a.size() / na;
  Shape out_shape = sa;
  out_shape.back() = na + nb;
  std::vector<double> out(rows * (na + nb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * na, na, out.data() + r * (na + nb));
    std::copy_n(b.data().data() + r * nb, nb, out.data() + r * (na + nb) + na);
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {a, b}, [a, b, rows, na, nb](std::span<const double> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[r * (na + nb) + j];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < nb; ++j) gb[r * nb + j] += g[r * (na + nb) + na + j];
    }
  });
}

Tensor mean_axis1(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("mean_axis1: needs rank 3, got " + to_string(a.shape()));
  const std::size_t b = a.dim(0), s = a.dim(1), d = a.dim(2);
  auto x = a.data();
  std::vector<double> out(b * d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += x[(i * s + t) * d + j];
  const double inv = 1.0 / static_cast<double>(s);
  for (auto& v : out) v *= inv;
  return Tensor::from_op({b, d}, std::move(out), {a}, [a, b, s, d, inv](std::span<const double> g) mutable {
    if (!a.requires_grad()) return;
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < s; ++t)
        for (std::size_t j = 0; j < d; ++j) ga[(i * s + t) * d + j] += g[i * d + j] * inv;
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& index_shape) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + to_string(table.shape()));
  if (numel(index_shape) != ids.size()) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids do not fill index shape " + to_string(index_shape));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(id) + " out of range for vocabulary of " +
                              std::to_string(vocab));
    }
  }
  std::vector<std::int32_t> index(ids.begin(), ids.end());
  std::vector<double> out(ids.size() * d);
  auto src = table.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy_n(src.data() + static_cast<std::size_t>(index[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = index_shape;
  out_shape.push_back(d);
  return Tensor::from_op(std::move(out_shape), std::move(out), {table},
                         [table, index = std::move(index), d](std::span<const double> g) mutable {
                           if (!table.requires_grad()) return;
                           auto gt = table.mutable_grad();
                           for (std::size_t i = 0; i < index.size(); ++i) {
                             double* row = gt.data() + static_cast<std::size_t>(index[i]) * d;
                             for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Normalization and regularization
// ---------------------------------------------------------------------------

Tensor softmax_last(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("softmax_last: scalar input");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * n;
    double* dst = out.data() + r * n;
    double peak = row[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(row[j])) throw NumericError("softmax_last: non-finite input");
      peak = std::max(peak, row[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (dst[j] = std::exp(row[j] - peak));
    for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
  }
  auto y = out;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [a, y = std::move(y), rows, n](std::span<const double> g) mutable {
    if (!a.requires_grad()) return;
    auto ga = a.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  if (gain.rank() != 1 || x.rank() < 1 || x.shape().back() != gain.dim(0)) {
    throw ShapeError("rms_norm: input " + to_string(x.shape()) + " does not match gain " + to_string(gain.shape()));
  }
  const std::size_t d = gain.dim(0);
  const std::size_t rows = x.size() / d;
  auto src = x.data();
  auto w = gain.data();
  std::vector<double> out(src.size());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += src[r * d + j] * src[r * d + j];
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = src[r * d + j] * inv_rms[r] * w[j];
  }
  return Tensor::from_op(x.shape(), std::move(out), {x, gain},
                         [x, gain, inv_rms = std::move(inv_rms), rows, d](std::span<const double> g) mutable {
                           auto src = x.data();
                           auto w = gain.data();
                           if (gain.requires_grad()) {
                             auto gg = gain.mutable_grad();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * src[r * d + j] * inv_rms[r];
                           }
                           if (x.requires_grad()) {
                             auto gx = x.mutable_grad();
                             for (std::size_t r = 0; r < rows; ++r) {
                               const double inv = inv_rms[r];
                               double dot = 0.0;
                               for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * w[j] * src[r * d + j];
                               const double coeff = inv * inv * inv * dot / static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                 gx[r * d + j] += inv * g[r * d + j] * w[j] - coeff * src[r * d + j];
                               }
                             }
                           }
                         });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] * mask[i];
  return Tensor::from_op(x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](std::span<const double> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  auto x = a.data();
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  return Tensor::from_op({1}, {total}, {a}, [a](std::span<const double> g) mutable {
    if (!a.requires_grad()) return;
    for (auto& v : a.mutable_grad()) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

}  // namespace mmfx
