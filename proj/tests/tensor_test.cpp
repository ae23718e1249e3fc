// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/tensor.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

namespace lenrep {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  Matrix m(r, c);
  for (auto& v : m.values()) v = g(rng);
  return m;
}

// Double-precision reference product.
std::vector<double> reference(const Matrix& a, const Matrix& b) {
  std::vector<double> out(a.rows() * b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t p = 0; p < a.cols(); ++p)
      for (std::size_t j = 0; j < b.cols(); ++j)
        out[i * b.cols() + j] += static_cast<double>(a(i, p)) * b(p, j);
  return out;
}

class MatmulShapes : public ::testing::TestWithParam<std::array<std::size_t, 3>> {};

TEST_P(MatmulShapes, MatchesDoubleReference) {
  const auto [m, k, n] = GetParam();
  const Matrix a = random_matrix(m, k, 1), b = random_matrix(k, n, 2);
  Matrix c;
  matmul(a, b, c);
  const auto ref = reference(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i)
    EXPECT_NEAR(c.values()[i], ref[i], 1e-4 * (1.0 + std::abs(ref[i])));
}

TEST_P(MatmulShapes, RowsDoNotDependOnBatchSize) {
  const auto [m, k, n] = GetParam();
  const Matrix a = random_matrix(m, k, 3), b = random_matrix(k, n, 4);
  Matrix c;
  matmul(a, b, c);
  std::vector<float> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    gemm_row(a.row(i).data(), b.values().data(), row.data(), k, n);
    for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(row[j], c(i, j)) << i << "," << j;
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, MatmulShapes,
                         ::testing::Values(std::array<std::size_t, 3>{1, 1, 1},
                                           std::array<std::size_t, 3>{3, 5, 7},
                                           std::array<std::size_t, 3>{9, 33, 49},
                                           std::array<std::size_t, 3>{17, 700, 40},
                                           std::array<std::size_t, 3>{64, 128, 264}));

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  const Matrix a = random_matrix(13, 7, 5), b = random_matrix(13, 11, 6);
  Matrix tn(7, 11);
  matmul_tn_acc(a, b, tn);
  Matrix expect;
  matmul(transpose(a), b, expect);
  for (std::size_t i = 0; i < expect.values().size(); ++i)
    EXPECT_NEAR(tn.values()[i], expect.values()[i], 1e-5);

  const Matrix c = random_matrix(9, 7, 7);
  Matrix nt, expect2;
  matmul_nt(a, c, nt);
  matmul(a, transpose(c), expect2);
  for (std::size_t i = 0; i < expect2.values().size(); ++i)
    EXPECT_NEAR(nt.values()[i], expect2.values()[i], 1e-5);
}

TEST(Matmul, AccumulateAddsToExisting) {
  const Matrix a = random_matrix(4, 6, 8), b = random_matrix(6, 5, 9);
  Matrix once;
  matmul(a, b, once);
  Matrix twice = once;
  matmul_acc(a, b, twice);
  for (std::size_t i = 0; i < once.values().size(); ++i)
    EXPECT_NEAR(twice.values()[i], 2 * once.values()[i], 1e-5);
}

TEST(Helpers, BiasAndColumnSums) {
  Matrix m(2, 3, 1.0F);
  const std::vector<float> bias{1, 2, 3};
  add_row_bias(m, bias);
  EXPECT_EQ(m(1, 2), 4.0F);
  std::vector<float> sums(3, 0.0F);
  accumulate_column_sums(m, sums);
  EXPECT_EQ(sums, (std::vector<float>{4, 6, 8}));
}

}  // namespace
}  // namespace lenrep
