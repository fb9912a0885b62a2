// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace moeup {

/// Dense row-major matrix of doubles. Used for everything that must be exact:
/// ridge accumulators, router weights, and the linear solves on them.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Matrix transpose() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Row-major rank-3 float tensor (batch x time x channel activations).
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, float fill = 0.0f)
      : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, fill) {}

  std::size_t dim0() const noexcept { return d0_; }
  std::size_t dim1() const noexcept { return d1_; }
  std::size_t dim2() const noexcept { return d2_; }

  float& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * d1_ + j) * d2_ + k];
  }
  float operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * d1_ + j) * d2_ + k];
  }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  // Channel vector at (i, j).
  std::span<const float> at(std::size_t i, std::size_t j) const {
    return {data_.data() + (i * d1_ + j) * d2_, d2_};
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// Max absolute entry.
double max_abs(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Throws NotPositiveDefiniteError with the failing pivot.
Matrix cholesky(const Matrix& spd);

/// Solves (a + ridge * I) X = b. `a` is symmetrized as (a + a^T) / 2 first.
Matrix solve_spd(const Matrix& a, const Matrix& b, double ridge);

/// gram += X^T X for `n` float rows of width gram.rows(), summed in double.
/// Only the upper triangle is summed and then mirrored, so gram stays exactly
/// symmetric.
void accumulate_gram(Matrix& gram, std::span<const float> rows, std::size_t n);

/// Numerically stable softmax (max-subtracted).
std::vector<float> softmax(std::span<const float> logits);
std::vector<double> softmax(std::span<const double> logits);

}  // namespace moeup
