// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>

namespace lenrep {

void Matrix::set_zero() noexcept { std::fill(data_.begin(), data_.end(), 0.0F); }

namespace {

constexpr std::size_t kRowBlock = 8;
constexpr std::size_t kColBlock = 32;
constexpr std::size_t kColTail = 16;
constexpr std::size_t kInnerBlock = 512;

// R rows x W columns register tile. Every element sees the same sequence of
// multiply then add in ascending p, regardless of R and W.
template <std::size_t R, std::size_t W>
inline void tile(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                 std::size_t ldc, std::size_t k, bool accumulate) noexcept {
  float acc[R][W];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < W; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : 0.0F;
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = b + p * ldb;
    for (std::size_t r = 0; r < R; ++r) {
      const float av = a[r * lda + p];
      for (std::size_t j = 0; j < W; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < W; ++j) c[r * ldc + j] = acc[r][j];
}

template <std::size_t R>
inline void row_strip(const float* a, std::size_t lda, const float* b, float* c, std::size_t ldc,
                      std::size_t k, std::size_t n, bool accumulate) noexcept {
  std::size_t j = 0;
  for (; j + kColBlock <= n; j += kColBlock)
    tile<R, kColBlock>(a, lda, b + j, n, c + j, ldc, k, accumulate);
  for (; j + kColTail <= n; j += kColTail)
    tile<R, kColTail>(a, lda, b + j, n, c + j, ldc, k, accumulate);
  for (; j < n; ++j) tile<R, 1>(a, lda, b + j, n, c + j, ldc, k, accumulate);
}

// Long inner dimensions are split into blocks so the B block stays in cache.
// Partial sums are stored and reloaded exactly, so the per-element order of
// operations is unchanged.
void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) noexcept {
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0F;
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kInnerBlock) {
    const std::size_t kk = std::min(kInnerBlock, k - p0);
    const bool acc = accumulate || p0 > 0;
    std::size_t i = 0;
    for (; i + kRowBlock <= m; i += kRowBlock)
      row_strip<kRowBlock>(a + i * k + p0, k, b + p0 * n, c + i * n, n, kk, n, acc);
    for (; i < m; ++i) row_strip<1>(a + i * k + p0, k, b + p0 * n, c + i * n, n, kk, n, acc);
  }
}

}  // namespace

void gemm_row(const float* a, const float* b, float* c, std::size_t k, std::size_t n,
              bool accumulate) noexcept {
  gemm(a, b, c, 1, k, n, accumulate);
}

void matmul(ConstMatrixRef a, ConstMatrixRef b, Matrix& c) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
  if (c.rows() != a.rows || c.cols() != b.cols) c.resize(a.rows, b.cols);
  gemm(a.data, b.data, c.data(), a.rows, a.cols, b.cols, false);
}

void matmul_acc(ConstMatrixRef a, ConstMatrixRef b, MatrixRef c) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
    throw std::invalid_argument("matmul_acc: shape mismatch");
  gemm(a.data, b.data, c.data, a.rows, a.cols, b.cols, true);
}

void matmul_tn_acc(ConstMatrixRef a, ConstMatrixRef b, MatrixRef c) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    throw std::invalid_argument("matmul_tn_acc: shape mismatch");
  const Matrix at = transpose(a);
  gemm(at.data(), b.data, c.data, at.rows(), at.cols(), b.cols, true);
}

void matmul_nt(ConstMatrixRef a, ConstMatrixRef b, Matrix& c) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: shape mismatch");
  matmul(a, transpose(b), c);
}

Matrix transpose(ConstMatrixRef m) {
  Matrix t(m.cols, m.rows);
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < m.rows; i0 += kTile)
    for (std::size_t j0 = 0; j0 < m.cols; j0 += kTile)
      for (std::size_t i = i0; i < std::min(i0 + kTile, m.rows); ++i)
        for (std::size_t j = j0; j < std::min(j0 + kTile, m.cols); ++j)
          t(j, i) = m.data[i * m.cols + j];
  return t;
}

void add_row_bias(MatrixRef m, std::span<const float> bias) noexcept {
  assert(bias.size() == m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    float* r = m.data + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) r[j] += bias[j];
  }
}

void accumulate_column_sums(ConstMatrixRef m, std::span<float> out) noexcept {
  assert(out.size() == m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const float* r = m.data + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += r[j];
  }
}

}  // namespace lenrep
