// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moeup/error.hpp"

namespace moeup {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, ErrorCode::kDimensionMismatch,
          "matrix data length does not match its shape");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorCode::kDimensionMismatch, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::kDimensionMismatch,
          "matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.values()) best = std::max(best, std::abs(v));
  return best;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kDimensionMismatch,
          "max_abs_diff: shape mismatch");
  double best = 0.0;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) best = std::max(best, std::abs(x[i] - y[i]));
  return best;
}

Matrix cholesky(const Matrix& spd) {
  require(spd.rows() == spd.cols(), ErrorCode::kDimensionMismatch,
          "cholesky: matrix is not square");
  const std::size_t n = spd.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = spd(j, j);
    auto lj = l.row(j);
    for (std::size_t k = 0; k < j; ++k) diag -= lj[k] * lj[k];
    if (!(diag > 0.0) || !std::isfinite(diag)) throw NotPositiveDefiniteError(j);
    const double ljj = std::sqrt(diag);
    lj[j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      auto li = l.row(i);
      double s = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      li[j] = s / ljj;
    }
  }
  return l;
}

Matrix solve_spd(const Matrix& a, const Matrix& b, double ridge) {
  require(a.rows() == a.cols(), ErrorCode::kDimensionMismatch, "solve_spd: a is not square");
  require(b.rows() == a.rows(), ErrorCode::kDimensionMismatch,
          "solve_spd: b has " + std::to_string(b.rows()) + " rows, expected " +
              std::to_string(a.rows()));
  require(ridge >= 0.0 && std::isfinite(ridge), ErrorCode::kInvalidArgument,
          "solve_spd: ridge must be finite and >= 0");
  const std::size_t n = a.rows();
  const double scale = std::max(1.0, max_abs(a));
  Matrix reg(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double aij = a(i, j);
      const double aji = a(j, i);
      require(std::abs(aij - aji) <= 1e-9 * scale, ErrorCode::kInvalidArgument,
              "solve_spd: matrix is not symmetric");
      reg(i, j) = 0.5 * (aij + aji);
    }
    reg(i, i) += ridge;
  }
  const Matrix l = cholesky(reg);

  // Forward substitution L Y = B, then back substitution L^T X = Y, column-wise
  // over all right-hand sides at once.
  const std::size_t m = b.cols();
  Matrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      auto xk = x.row(k);
      for (std::size_t c = 0; c < m; ++c) xi[c] -= lik * xk[c];
    }
    const double inv = 1.0 / l(i, i);
    for (std::size_t c = 0; c < m; ++c) xi[c] *= inv;
  }
  for (std::size_t ii = n; ii-- > 0;) {
    auto xi = x.row(ii);
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l(k, ii);
      auto xk = x.row(k);
      for (std::size_t c = 0; c < m; ++c) xi[c] -= lki * xk[c];
    }
    const double inv = 1.0 / l(ii, ii);
    for (std::size_t c = 0; c < m; ++c) xi[c] *= inv;
  }
  return x;
}

void accumulate_gram(Matrix& gram, std::span<const float> rows, std::size_t n) {
  const std::size_t h = gram.rows();
  require(gram.cols() == h && rows.size() == n * h, ErrorCode::kDimensionMismatch,
          "accumulate_gram: shape mismatch");
  std::vector<double> x(h);
  // The batch increment is summed in a scratch upper triangle and added once,
  // so it does not depend on what the accumulator already holds, and the
  // mirrored result is exactly symmetric.
  std::vector<double> inc(h * h, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < h; ++i) x[i] = static_cast<double>(rows[r * h + i]);
    for (std::size_t i = 0; i < h; ++i) {
      const double xi = x[i];
      double* gi = inc.data() + i * h;
      for (std::size_t j = i; j < h; ++j) gi[j] += xi * x[j];
    }
  }
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = i; j < h; ++j) gram(i, j) += inc[i * h + j];
    for (std::size_t j = i + 1; j < h; ++j) gram(j, i) = gram(i, j);
  }
}

namespace {
template <class T>
std::vector<T> softmax_impl(std::span<const T> v) {
  std::vector<T> out(v.size());
  if (v.empty()) return out;
  const T mx = *std::max_element(v.begin(), v.end());
  T sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (auto& o : out) o /= sum;
  return out;
}
}  // namespace

std::vector<float> softmax(std::span<const float> logits) { return softmax_impl(logits); }
std::vector<double> softmax(std::span<const double> logits) { return softmax_impl(logits); }

}  // namespace moeup
