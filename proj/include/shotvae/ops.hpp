#pragma once

// Differentiable tensor operations.
//
// Binary elementwise ops broadcast NumPy-style: shapes are aligned on their
// trailing dimensions and size-1 (or missing) dimensions stretch.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "shotvae/tensor.hpp"

namespace shotvae::ops {

namespace detail {

using shotvae::detail::Node;

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Maps each flat output index to the flat index of one broadcast operand.
class IndexMap {
 public:
  IndexMap(const Shape& in, const Shape& out) {
    const std::size_t n_in = shape_size(in);
    const std::size_t n_out = shape_size(out);
    if (n_in == n_out) {
      kind_ = Kind::Identity;
      return;
    }
    // Operand equal to a trailing block of the output (after dropping its
    // leading 1s) repeats with period n_in.
    std::size_t lead = 0;
    while (lead < in.size() && in[lead] == 1) ++lead;
    const std::size_t tail = in.size() - lead;
    if (tail <= out.size() &&
        std::equal(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end(),
                   out.end() - static_cast<std::ptrdiff_t>(tail))) {
      kind_ = Kind::Periodic;
      period_ = n_in;
      return;
    }
    kind_ = Kind::General;
    const std::size_t rank = out.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t axis_in = in.size() - 1 - k;
      const std::size_t axis_out = rank - 1 - k;
      strides[axis_out] = in[axis_in] == 1 ? 0 : stride;
      stride *= in[axis_in];
    }
    map_.resize(n_out);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t flat_in = 0;
    for (std::size_t i = 0; i < n_out; ++i) {
      map_[i] = flat_in;
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        flat_in += strides[ax];
        if (idx[ax] < out[ax]) break;
        flat_in -= strides[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (kind_) {
      case Kind::Identity: return i;
      case Kind::Periodic: return i % period_;
      default: return map_[i];
    }
  }

 private:
  enum class Kind { Identity, Periodic, General } kind_ = Kind::Identity;
  std::size_t period_ = 1;
  std::vector<std::size_t> map_;
};

/// out = f(a, b); backward uses da(a, b, out), db(a, b, out).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_size(out_shape);
  auto ma = std::make_shared<IndexMap>(a.shape(), out_shape);
  auto mb = std::make_shared<IndexMap>(b.shape(), out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[(*ma)(i)], bv[(*mb)(i)]);
  return Tensor::make_result(std::move(out_shape), std::move(out), {&a, &b},
                             [ma, mb, da, db](Node& self) {
                               Node& pa = *self.parents[0];
                               Node& pb = *self.parents[1];
                               const std::size_t n = self.value.size();
                               if (pa.requires_grad) {
                                 auto& ga = pa.ensure_grad();
                                 for (std::size_t i = 0; i < n; ++i) {
                                   const auto ia = (*ma)(i);
                                   ga[ia] += self.grad[i] * da(pa.value[ia], pb.value[(*mb)(i)], self.value[i]);
                                 }
                               }
                               if (pb.requires_grad) {
                                 auto& gb = pb.ensure_grad();
                                 for (std::size_t i = 0; i < n; ++i) {
                                   const auto ib = (*mb)(i);
                                   gb[ib] += self.grad[i] * db(pa.value[(*ma)(i)], pb.value[ib], self.value[i]);
                                 }
                               }
                             });
}

/// out = f(x); backward uses dfdx(x, out).
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return Tensor::make_result(a.shape(), std::move(out), {&a}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Natural log; any entry <= 0 is a DomainError (no silent clamping).
inline Tensor log(const Tensor& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] > 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(a[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

/// Clamp to [lo, hi]; gradient passes only where lo <= x <= hi.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Tensor clamp_min(const Tensor& a, double lo) {
  return clamp(a, lo, std::numeric_limits<double>::infinity());
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ------------------------------------------------------------------- softmax

/// Softmax over the last dimension, computed with max subtraction.
inline Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax of a scalar");
  const std::size_t k = a.cols();
  const std::size_t rows = a.size() / k;
  const auto av = a.values();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * k;
    double* y = out.data() + r * k;
    const double m = *std::max_element(x, x + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (y[j] = std::exp(x[j] - m));
    for (std::size_t j = 0; j < k; ++j) y[j] /= z;
  }
  return Tensor::make_result(a.shape(), std::move(out), {&a}, [k, rows](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * k;
      const double* gy = self.grad.data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += y[j] * (gy[j] - dot);
    }
  });
}

/// log(softmax(a)) over the last dimension without forming small probabilities.
inline Tensor log_softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("log_softmax of a scalar");
  const std::size_t k = a.cols();
  const std::size_t rows = a.size() / k;
  const auto av = a.values();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * k;
    const double m = *std::max_element(x, x + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[j] - lse;
  }
  return Tensor::make_result(a.shape(), std::move(out), {&a}, [k, rows](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* ly = self.value.data() + r * k;
      const double* gy = self.grad.data() + r * k;
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) total += gy[j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += gy[j] - std::exp(ly[j]) * total;
    }
  });
}

// -------------------------------------------------------------------- matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  using detail::ConstMap;
  using detail::MutMap;
  const auto mi = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k),
             ni = static_cast<Eigen::Index>(n);
  MutMap(out.data(), mi, ni).noalias() = ConstMap(a.values().data(), mi, ki) * ConstMap(b.values().data(), ki, ni);
  return Tensor::make_result({m, n}, std::move(out), {&a, &b}, [mi, ki, ni](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    ConstMap g(self.grad.data(), mi, ni);
    if (pa.requires_grad) {
      MutMap(pa.ensure_grad().data(), mi, ki).noalias() += g * ConstMap(pb.value.data(), ki, ni).transpose();
    }
    if (pb.requires_grad) {
      MutMap(pb.ensure_grad().data(), ki, ni).noalias() += ConstMap(pa.value.data(), mi, ki).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_result({}, {s}, {&a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& x : g) x += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_result({}, {s / n}, {&a}, [n](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& x : g) x += self.grad[0] / n;
  });
}

namespace detail {

inline Tensor reduce_axis(const Tensor& a, std::size_t axis, bool average) {
  if (axis >= a.rank()) {
    throw ShapeError("reduction axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
  }
  const Shape& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  const double w = average ? 1.0 / static_cast<double>(len) : 1.0;
  const auto av = a.values();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = av.data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (w != 1.0) {
    for (auto& v : out) v *= w;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {&a},
                             [outer, inner, len, w](Node& self) {
                               auto& g = self.parents[0]->ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t l = 0; l < len; ++l) {
                                   double* dst = g.data() + (o * len + l) * inner;
                                   const double* src = self.grad.data() + o * inner;
                                   for (std::size_t i = 0; i < inner; ++i) dst[i] += w * src[i];
                                 }
                               }
                             });
}

}  // namespace detail

inline Tensor sum(const Tensor& a, std::size_t axis) { return detail::reduce_axis(a, axis, false); }
inline Tensor mean(const Tensor& a, std::size_t axis) { return detail::reduce_axis(a, axis, true); }

/// Sum over the last dimension (per-row totals).
inline Tensor sum_last(const Tensor& a) { return sum(a, a.rank() - 1); }

// ------------------------------------------------------------ restructuring

/// Concatenate two matrices along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols row counts differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  std::vector<double> out(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.values().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return Tensor::make_result({rows, ca + cb}, std::move(out), {&a, &b}, [rows, ca, cb](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * (ca + cb) + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cb; ++j) g[r * cb + j] += self.grad[r * (ca + cb) + ca + j];
    }
  });
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank2(a, "slice_cols");
  const std::size_t rows = a.dim(0), c = a.dim(1);
  if (begin >= end || end > c) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(a.values().data() + r * c + begin, w, out.data() + r * w);
  return Tensor::make_result({rows, w}, std::move(out), {&a}, [rows, c, w, begin](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * c + begin + j] += self.grad[r * w + j];
  });
}

/// Rows of a matrix selected (with repetition allowed) by index.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  detail::require_rank2(a, "gather_rows");
  const std::size_t rows = a.dim(0), c = a.dim(1);
  if (index.empty()) throw ShapeError("gather_rows with empty index");
  std::vector<double> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("gather_rows index " + std::to_string(index[i]) + " out of range for " +
                       shape_str(a.shape()));
    }
    std::copy_n(a.values().data() + index[i] * c, c, out.data() + i * c);
  }
  return Tensor::make_result({index.size(), c}, std::move(out), {&a}, [index, c](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[index[i] * c + j] += self.grad[i * c + j];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return Tensor::make_result(std::move(shape), a.to_vector(), {&a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace shotvae::ops
