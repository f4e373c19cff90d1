// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hqf/errors.hpp"

namespace hqf {

using Vector = std::vector<double>;
using Vec3 = std::array<double, 3>;

/// Row-major dense matrix of doubles. Biases and other 1-D parameters are
/// stored as 1×n matrices so that every tensor shares one representation.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data has " + std::to_string(data_.size()) +
                           " elements, expected " + std::to_string(rows_ * cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

/// Four independent partial sums break the add dependency chain.
inline double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
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

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

/// Y = X·Wᵀ + b for a batch of row vectors. W is out×in, b is 1×out (or empty).
/// Rows are accumulated as axpy sweeps over Wᵀ, four input rows at a time,
/// so the inner loop runs over independent outputs and vectorizes.
inline Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.cols()) {
    throw DimensionError("linear: input " + shape_str(x) + " vs weight " + shape_str(w));
  }
  if (!b.empty() && b.size() != w.rows()) {
    throw DimensionError("linear: bias " + shape_str(b) + " vs weight " + shape_str(w));
  }
  const std::size_t n = x.rows(), in = w.cols(), out = w.rows();
  const Matrix wt = transpose(w);
  Matrix y(n, out);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* __restrict y0 = y.row(i).data();
    double* __restrict y1 = y.row(i + 1).data();
    double* __restrict y2 = y.row(i + 2).data();
    double* __restrict y3 = y.row(i + 3).data();
    for (std::size_t k = 0; k < in; ++k) {
      const double a0 = x(i, k), a1 = x(i + 1, k), a2 = x(i + 2, k), a3 = x(i + 3, k);
      const double* __restrict wk = wt.row(k).data();
      for (std::size_t o = 0; o < out; ++o) {
        y0[o] += a0 * wk[o];
        y1[o] += a1 * wk[o];
        y2[o] += a2 * wk[o];
        y3[o] += a3 * wk[o];
      }
    }
  }
  for (; i < n; ++i) {
    double* __restrict yi = y.row(i).data();
    for (std::size_t k = 0; k < in; ++k) {
      const double a = x(i, k);
      const double* __restrict wk = wt.row(k).data();
      for (std::size_t o = 0; o < out; ++o) yi[o] += a * wk[o];
    }
  }
  if (!b.empty()) {
    for (std::size_t r = 0; r < n; ++r) {
      auto yr = y.row(r);
      for (std::size_t o = 0; o < out; ++o) yr[o] += b.data()[o];
    }
  }
  return y;
}

/// C = A·B.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " x " + shape_str(b));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("add: " + shape_str(a) + " vs " + shape_str(b));
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Per-row layer normalization with affine parameters gamma, beta (1×d).
inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                         double eps = 1e-5) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw DimensionError("layer_norm: parameters do not match width " + std::to_string(x.cols()));
  }
  Matrix y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    double mean = 0.0;
    for (double v : xi) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : xi) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      y(i, j) = (xi[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
    }
  }
  return y;
}

inline double distance_xy(const Vec3& a, const Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace hqf
