// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lenrep {

/// Non-owning views over row-major float storage.
struct ConstMatrixRef {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  float operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const noexcept { return {data + r * cols, cols}; }
  std::span<const float> flat() const noexcept { return {data, rows * cols}; }
};

struct MatrixRef {
  float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  operator ConstMatrixRef() const noexcept { return {data, rows, cols}; }
  float& operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
  std::span<float> row(std::size_t r) const noexcept { return {data + r * cols, cols}; }
  std::span<float> flat() const noexcept { return {data, rows * cols}; }
};

/// Dense row-major float matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0F)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<float>& values() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, 0.0F);
  }
  void set_zero() noexcept;

  operator ConstMatrixRef() const noexcept { return {data_.data(), rows_, cols_}; }
  operator MatrixRef() noexcept { return {data_.data(), rows_, cols_}; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Every output element of the kernels below is accumulated over the inner
// dimension in ascending order, one row at a time. A row's result therefore
// does not depend on how many other rows are in the same call, which is what
// makes incremental decoding bit-identical to a full forward pass.

/// c[1 x n] = a[1 x k] * b[k x n]  (+ c when accumulate)
void gemm_row(const float* a, const float* b, float* c, std::size_t k, std::size_t n,
              bool accumulate = false) noexcept;

/// C = A * B  (C is resized)
void matmul(ConstMatrixRef a, ConstMatrixRef b, Matrix& c);
/// C += A * B
void matmul_acc(ConstMatrixRef a, ConstMatrixRef b, MatrixRef c);
/// C += A^T * B  (weight gradients)
void matmul_tn_acc(ConstMatrixRef a, ConstMatrixRef b, MatrixRef c);
/// C = A * B^T  (input gradients; C is resized)
void matmul_nt(ConstMatrixRef a, ConstMatrixRef b, Matrix& c);

Matrix transpose(ConstMatrixRef m);

void add_row_bias(MatrixRef m, std::span<const float> bias) noexcept;
/// out[j] += sum_i m(i, j)
void accumulate_column_sums(ConstMatrixRef m, std::span<float> out) noexcept;

}  // namespace lenrep
