#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dpage/error.hpp"

namespace dpage {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor of doubles. Rank 1 and 2 are what the model uses;
// a rank-1 tensor behaves as a single row where row-wise ops are concerned.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Leading dimension for matrices; 1 for vectors.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Computation graph

enum class OpTag {
  leaf,
  matmul,
  matmul_nt,
  add,
  mul,
  sigmoid,
  tanh,
  log,
  neg,
  concat,
  slice,
  softmax,
  log_softmax,
  gather_rows,
  select_columns,
  sum,
  sum_cols,
  mul_column,
  scale,
  repeat_rows,
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated (zeroed) only when requires_grad
  OpTag op = OpTag::leaf;
  std::vector<Var> parents;
  bool requires_grad = false;
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const noexcept { return value.shape(); }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

inline Var trainable(Tensor value) {
  auto node = std::make_shared<Node>();
  node->grad = Tensor(value.shape());
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

namespace detail {

inline Var make_result(Tensor value, OpTag op, std::vector<Var> parents,
                       std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  const bool needs = grad_enabled() &&
                     std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p->requires_grad; });
  if (needs) {
    node->grad = Tensor(value.shape());
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
    node->requires_grad = true;
  }
  node->value = std::move(value);
  return node;
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw DimensionError(std::string(what) + " expects a matrix, got " + shape_str(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Dot product with four independent partial sums. The summation order is
// fixed by the code, so results do not depend on compiler vectorization.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) axpy(ai[p], b + p * n, ci, n);
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) axpy(a[i * k + p], b + i * n, c + p * n, n);
}

inline void softmax_rows(const Tensor& x, Tensor& out) {
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = out.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations

/// Matrix product a[m x k] * b[k x n].
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  if (bv.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  Tensor out({m, n});
  detail::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return detail::make_result(std::move(out), OpTag::matmul, {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (pa.requires_grad) {
      // dA = G * B^T
      detail::gemm_nt(g, pb.value.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      // dB = A^T * G
      detail::gemm_tn(pa.value.data(), g, pb.grad.data(), m, k, n);
    }
  });
}

/// Product with a transposed right operand: x[m x k] * w[n x k]^T. This is
/// how every weight matrix stored as (out x in) is applied to a batch.
inline Var matmul_nt(const Var& x, const Var& w) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  detail::require_matrix(xv, "matmul_nt");
  detail::require_matrix(wv, "matmul_nt");
  const std::size_t m = xv.shape()[0], k = xv.shape()[1], n = wv.shape()[0];
  if (wv.shape()[1] != k)
    throw DimensionError("matmul_nt: inner dimensions differ for " + shape_str(xv.shape()) +
                         " and transposed " + shape_str(wv.shape()));
  Tensor out({m, n});
  detail::gemm_nt(xv.data(), wv.data(), out.data(), m, k, n);
  return detail::make_result(std::move(out), OpTag::matmul_nt, {x, w}, [m, k, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    const double* g = self.grad.data();
    if (px.requires_grad) detail::gemm_nn(g, pw.value.data(), px.grad.data(), m, n, k);
    if (pw.requires_grad) detail::gemm_tn(g, px.value.data(), pw.grad.data(), m, n, k);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return detail::make_result(std::move(out), OpTag::add, {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) detail::axpy(1.0, self.grad.data(), p->grad.data(), self.grad.size());
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a->value, b->value, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return detail::make_result(std::move(out), OpTag::mul, {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.grad.size();
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < n; ++i) pb.grad[i] += self.grad[i] * pa.value[i];
  });
}

inline Var sigmoid(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return detail::make_result(std::move(out), OpTag::sigmoid, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      p.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

inline Var tanh(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = std::tanh(v);
  return detail::make_result(std::move(out), OpTag::tanh, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      p.grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

inline Var log(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  return detail::make_result(std::move(out), OpTag::log, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] / p.value[i];
  });
}

inline Var neg(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = -v;
  return detail::make_result(std::move(out), OpTag::neg, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] -= self.grad[i];
  });
}

inline Var scale(const Var& x, double factor) {
  Tensor out = x->value;
  for (auto& v : out.values()) v *= factor;
  return detail::make_result(std::move(out), OpTag::scale, {x}, [factor](Node& self) {
    detail::axpy(factor, self.grad.data(), self.parents[0]->grad.data(), self.grad.size());
  });
}

/// Concatenation along `axis` (0 or 1 for matrices, 0 for vectors). Operands
/// with a zero extent along the axis are allowed and contribute nothing.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& first = parts.front()->shape();
  const std::size_t rank = first.size();
  if (axis >= rank)
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p->shape();
    bool ok = s.size() == rank;
    for (std::size_t d = 0; ok && d < rank; ++d)
      if (d != axis && s[d] != first[d]) ok = false;
    if (!ok)
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s));
    out_shape[axis] += s[axis];
  }
  // View as [outer x (extent * inner)] blocks.
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < rank; ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  Tensor out(out_shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  for (const auto& p : parts) {
    const std::size_t width = p->shape()[axis] * inner;
    offsets.push_back(offset);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p->value.data() + o * width, width, out.data() + o * out_row + offset);
    offset += width;
  }
  return detail::make_result(
      std::move(out), OpTag::concat, parts,
      [axis, outer, inner, out_row, offsets = std::move(offsets)](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
          Node& p = *self.parents[i];
          if (!p.requires_grad) continue;
          const std::size_t width = p.value.shape()[axis] * inner;
          for (std::size_t o = 0; o < outer; ++o)
            detail::axpy(1.0, self.grad.data() + o * out_row + offsets[i],
                         p.grad.data() + o * width, width);
        }
      });
}

inline Var concat(const Var& a, const Var& b, std::size_t axis = 0) { return concat({a, b}, axis); }

/// Contiguous slice [start, start + length) along `axis`.
inline Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x->shape();
  if (axis >= s.size() || start + length > s[axis])
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_row = s[axis] * inner;
  const std::size_t width = length * inner;
  const std::size_t offset = start * inner;
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x->value.data() + o * in_row + offset, width, out.data() + o * width);
  return detail::make_result(std::move(out), OpTag::slice, {x},
                             [outer, in_row, width, offset](Node& self) {
                               Node& p = *self.parents[0];
                               for (std::size_t o = 0; o < outer; ++o)
                                 detail::axpy(1.0, self.grad.data() + o * width,
                                              p.grad.data() + o * in_row + offset, width);
                             });
}

/// Splits `x` along `axis` into [0, first) and [first, end).
inline std::pair<Var, Var> split(const Var& x, std::size_t axis, std::size_t first) {
  if (axis >= x->shape().size() || first > x->shape()[axis])
    throw DimensionError("split: seam " + std::to_string(first) + " outside " +
                         shape_str(x->shape()));
  return {slice(x, axis, 0, first), slice(x, axis, first, x->shape()[axis] - first)};
}

/// Softmax over the last dimension, row by row.
inline Var softmax(const Var& x) {
  if (x->value.cols() == 0) throw DimensionError("softmax: empty input");
  Tensor out(x->shape());
  detail::softmax_rows(x->value, out);
  return detail::make_result(std::move(out), OpTag::softmax, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    const std::size_t rows = self.value.rows(), cols = self.value.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double* dx = p.grad.data() + r * cols;
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) dx[c] += y[c] * (g[c] - inner);
    }
  });
}

/// Row-wise log-softmax (max-subtracted log-sum-exp).
inline Var log_softmax(const Var& x) {
  if (x->value.cols() == 0) throw DimensionError("log_softmax: empty input");
  const std::size_t rows = x->value.rows(), cols = x->value.cols();
  Tensor out(x->shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x->value.data() + r * cols;
    double* yr = out.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(xr[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] - lse;
  }
  return detail::make_result(std::move(out), OpTag::log_softmax, {x}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double* dx = p.grad.data() + r * cols;
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
      for (std::size_t c = 0; c < cols; ++c) dx[c] += g[c] - std::exp(y[c]) * gsum;
    }
  });
}

/// Row lookup: out[i] = table[ids[i]]. Backward scatters into the selected
/// rows only; unselected rows receive no gradient.
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  detail::require_matrix(table->value, "gather_rows");
  const std::size_t n_rows = table->shape()[0], width = table->shape()[1];
  Tensor out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n_rows)
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " out of range for " +
                          std::to_string(n_rows) + " rows");
    std::copy_n(table->value.data() + ids[i] * width, width, out.data() + i * width);
  }
  return detail::make_result(
      std::move(out), OpTag::gather_rows, {table},
      [ids = std::vector<std::size_t>(ids.begin(), ids.end()), width](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < ids.size(); ++i)
          detail::axpy(1.0, self.grad.data() + i * width, p.grad.data() + ids[i] * width, width);
      });
}

/// out[r] = x[r, cols[r]] as an [n x 1] column.
inline Var select_columns(const Var& x, std::span<const std::size_t> cols) {
  detail::require_matrix(x->value, "select_columns");
  const std::size_t rows = x->shape()[0], width = x->shape()[1];
  if (cols.size() != rows)
    throw DimensionError("select_columns: " + std::to_string(cols.size()) +
                         " indices for " + std::to_string(rows) + " rows");
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    if (cols[r] >= width) throw ContractError("select_columns: column index out of range");
    out[r] = x->value[r * width + cols[r]];
  }
  return detail::make_result(
      std::move(out), OpTag::select_columns, {x},
      [idx = std::vector<std::size_t>(cols.begin(), cols.end()), width](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t r = 0; r < idx.size(); ++r) p.grad[r * width + idx[r]] += self.grad[r];
      });
}

/// Sum of all elements, shape [1].
inline Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x->value.values()) total += v;
  return detail::make_result(Tensor::scalar(total), OpTag::sum, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    const double g = self.grad[0];
    for (auto& v : p.grad.values()) v += g;
  });
}

/// Per-row sum: [rows x cols] -> [rows x 1].
inline Var sum_cols(const Var& x) {
  detail::require_matrix(x->value, "sum_cols");
  const std::size_t rows = x->shape()[0], cols = x->shape()[1];
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += x->value[r * cols + c];
  return detail::make_result(std::move(out), OpTag::sum_cols, {x}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) p.grad[r * cols + c] += self.grad[r];
  });
}

/// Scales row r of x[rows x cols] by c[r] where c is [rows x 1].
inline Var mul_column(const Var& x, const Var& c) {
  detail::require_matrix(x->value, "mul_column");
  const std::size_t rows = x->shape()[0], cols = x->shape()[1];
  if (c->shape() != Shape{rows, 1})
    throw DimensionError("mul_column: expected [" + std::to_string(rows) + "x1] scale, got " +
                         shape_str(c->shape()));
  Tensor out = x->value;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] *= c->value[r];
  return detail::make_result(std::move(out), OpTag::mul_column, {x, c}, [rows, cols](Node& self) {
    Node& px = *self.parents[0];
    Node& pc = *self.parents[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * cols;
      if (px.requires_grad) detail::axpy(pc.value[r], g, px.grad.data() + r * cols, cols);
      if (pc.requires_grad) pc.grad[r] += detail::dot(g, px.value.data() + r * cols, cols);
    }
  });
}

/// Tiles a [1 x cols] row into [n x cols].
inline Var repeat_rows(const Var& x, std::size_t n) {
  detail::require_matrix(x->value, "repeat_rows");
  if (x->shape()[0] != 1) throw DimensionError("repeat_rows: expects a single row");
  const std::size_t cols = x->shape()[1];
  Tensor out({n, cols});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(x->value.data(), cols, out.data() + r * cols);
  return detail::make_result(std::move(out), OpTag::repeat_rows, {x}, [n, cols](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t r = 0; r < n; ++r)
      detail::axpy(1.0, self.grad.data() + r * cols, p.grad.data(), cols);
  });
}

enum class UnaryFn { sigmoid, tanh, log, neg };

inline Var elementwise_unary(UnaryFn f, const Var& x) {
  switch (f) {
    case UnaryFn::sigmoid: return sigmoid(x);
    case UnaryFn::tanh: return tanh(x);
    case UnaryFn::log: return log(x);
    case UnaryFn::neg: return neg(x);
  }
  throw ContractError("elementwise_unary: unknown function");
}

enum class BinaryFn { add, mul };

inline Var elementwise_binary(BinaryFn f, const Var& a, const Var& b) {
  return f == BinaryFn::add ? add(a, b) : mul(a, b);
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Accumulates d(loss)/d(leaf) into every trainable ancestor of `loss`.
/// Interior gradients are reset first so that repeated calls add exactly one
/// more copy of the gradient to the leaves.
inline void backward(const Var& loss) {
  if (loss->value.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape()));
  if (!loss->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->op != OpTag::leaf) n->grad.fill(0.0);
  loss->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Parameters

struct Parameter {
  std::string name;
  Var node;
};

using ParameterList = std::vector<Parameter>;

inline void zero_grads(const ParameterList& params) {
  for (const auto& p : params) p.node->grad.fill(0.0);
}

inline double global_grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.node->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

/// Clip-by-global-norm SGD update followed by zeroing of all gradients.
/// Returns the pre-clip gradient norm.
inline double sgd_step(const ParameterList& params, double lr, double clip) {
  const double norm = global_grad_norm(params);
  const double factor = (std::isfinite(clip) && norm > clip) ? clip / norm : 1.0;
  for (const auto& p : params) {
    Tensor& value = p.node->value;
    Tensor& grad = p.node->grad;
    for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * factor * grad[i];
    grad.fill(0.0);
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Relative error with the denominator floored at 1e-4, so gradients close
/// to zero are judged by absolute error.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

/// Compares backward() against central differences for every element of
/// every parameter. `build_loss` must rebuild the graph from scratch each call.
inline GradCheckReport grad_check(const std::function<Var()>& build_loss,
                                  const ParameterList& params, double tolerance,
                                  double step = 1e-5) {
  GradCheckReport report;
  report.tolerance = tolerance;
  zero_grads(params);
  backward(build_loss());
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.node->grad);
  zero_grads(params);

  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi].node->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = build_loss()->value[0];
      value[i] = saved - step;
      const double down = build_loss()->value[0];
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[pi][i], numeric);
      ++report.checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = params[pi].name;
        report.worst_index = i;
        report.analytic = analytic[pi][i];
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace dpage
