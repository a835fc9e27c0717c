#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cspn/errors.hpp"

namespace cspn {

/// Dense row-major matrix of 64-bit floats. Scalars are 1x1.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(size_t(r) * c, fill) {}

  static Matrix zeros(int r, int c) { return Matrix(r, c, 0.0); }
  static Matrix scalar(double x) {
    Matrix m(1, 1);
    m.data[0] = x;
    return m;
  }

  double& operator()(int r, int c) { return data[size_t(r) * cols + c]; }
  double operator()(int r, int c) const { return data[size_t(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const Matrix& o) const = default;
};

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(where) + ": " + a.shape_str() + " vs " + b.shape_str());
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeMismatch("matmul: " + a.shape_str() + " * " + b.shape_str());
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[size_t(i) * a.cols];
    double* crow = &c.data[size_t(i) * c.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[size_t(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "sub");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& x : c.data) x *= s;
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix c(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) c(j, i) = a(i, j);
  return c;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows)
    throw ShapeMismatch("concat_cols: " + a.shape_str() + " | " + b.shape_str());
  Matrix c(a.rows, a.cols + b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) c(i, j) = a(i, j);
    for (int j = 0; j < b.cols; ++j) c(i, a.cols + j) = b(i, j);
  }
  return c;
}

inline Matrix concat_rows(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    throw ShapeMismatch("concat_rows: " + a.shape_str() + " / " + b.shape_str());
  Matrix c(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), c.data.begin());
  std::copy(b.data.begin(), b.data.end(), c.data.begin() + a.size());
  return c;
}

/// Rows [r0, r1).
inline Matrix slice_rows(const Matrix& a, int r0, int r1) {
  if (r0 < 0 || r1 > a.rows || r0 > r1)
    throw ShapeMismatch("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                        ") of " + a.shape_str());
  Matrix c(r1 - r0, a.cols);
  std::copy(a.data.begin() + size_t(r0) * a.cols, a.data.begin() + size_t(r1) * a.cols,
            c.data.begin());
  return c;
}

/// Columns [c0, c1).
inline Matrix slice_cols(const Matrix& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols || c0 > c1)
    throw ShapeMismatch("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                        ") of " + a.shape_str());
  Matrix c(a.rows, c1 - c0);
  for (int i = 0; i < a.rows; ++i)
    for (int j = c0; j < c1; ++j) c(i, j - c0) = a(i, j);
  return c;
}

/// Adds a 1 x cols bias row to every row of a. The only broadcast supported.
inline Matrix add_rowvec(const Matrix& a, const Matrix& bias) {
  if (bias.rows != 1 || bias.cols != a.cols)
    throw ShapeMismatch("add_rowvec: " + a.shape_str() + " + " + bias.shape_str());
  Matrix c = a;
  for (int i = 0; i < c.rows; ++i)
    for (int j = 0; j < c.cols; ++j) c(i, j) += bias(0, j);
  return c;
}

inline Matrix relu(const Matrix& a) {
  Matrix c = a;
  for (double& x : c.data) x = x > 0.0 ? x : 0.0;
  return c;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& a) {
  Matrix c(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = a(i, 0);
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a(i, j));
    double sum = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      double e = std::exp(a(i, j) - mx);
      c(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < a.cols; ++j) c(i, j) /= sum;
  }
  return c;
}

/// Per-row layer normalization over the feature dimension, with 1 x cols
/// gain and bias. Population variance, eps inside the square root.
inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                         double eps = 1e-6) {
  if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols)
    throw ShapeMismatch("layer_norm: x " + x.shape_str() + " gain " + gain.shape_str() +
                        " bias " + bias.shape_str());
  Matrix y(x.rows, x.cols);
  const int d = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = x(i, j) - mean;
      var += c * c;
    }
    var /= d;
    double inv_sigma = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j)
      y(i, j) = gain(0, j) * (x(i, j) - mean) * inv_sigma + bias(0, j);
  }
  return y;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace cspn
