/* Copyright 2026 The wmlstm Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "wmlstm/numerics.h"

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "oracle_values.h"
#include "wmlstm/errors.h"

namespace wmlstm {
namespace {

TEST(MatvecTest, HandExample) {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  const Vector out = matvec(m, Vector::Ones(2));
  EXPECT_EQ(out(0), 3.0);
  EXPECT_EQ(out(1), 7.0);
}

TEST(MatvecTest, MatchesTripleLoopOnRandomShapes) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + static_cast<int>(rng.below(9));
    const int c = 1 + static_cast<int>(rng.below(9));
    Matrix m(r, c);
    Vector v(c);
    for (int k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-2, 2);
    for (int k = 0; k < c; ++k) v(k) = rng.uniform(-2, 2);
    const Vector out = matvec(m, v);
    for (int i = 0; i < r; ++i) {
      double acc = 0.0;
      for (int j = 0; j < c; ++j) acc += m(i, j) * v(j);
      EXPECT_NEAR(out(i), acc, 1e-12);
    }
  }
}

TEST(MatvecTest, RejectsDimensionMismatch) {
  EXPECT_THROW(matvec(Matrix::Zero(2, 3), Vector::Zero(2)), ContractViolation);
}

TEST(OuterTest, HandExample) {
  Vector a(2), b(2);
  a << 2, 3;
  b << 4, 5;
  Matrix expected(2, 2);
  expected << 8, 10, 12, 15;
  EXPECT_EQ(outer(a, b), expected);
}

TEST(HadamardTest, HandExampleAndMismatch) {
  Vector a(2), b(2);
  a << 0.5, 2;
  b << 0.5, 0.25;
  const Vector out = hadamard(a, b);
  EXPECT_EQ(out(0), 0.25);
  EXPECT_EQ(out(1), 0.5);
  EXPECT_THROW(hadamard(a, Vector::Zero(3)), ContractViolation);
}

TEST(L2NormTest, PythagoreanTriple) {
  Vector v(2);
  v << 3, 4;
  EXPECT_EQ(l2_norm(v), 5.0);
}

TEST(ActivationTest, ExactAtZeroAndSymmetric) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(1, 1);
  logistic_inplace(a);
  EXPECT_EQ(a(0, 0), 0.5);
  a.setZero();
  tanh_inplace(a);
  EXPECT_EQ(a(0, 0), 0.0);
}

TEST(ActivationTest, TanhAgreesWithStdAndSaturates) {
  Eigen::MatrixXd a(1, 2001);
  for (int k = 0; k < a.cols(); ++k) a(0, k) = -50.0 + 0.05 * k;
  Eigen::MatrixXd t = a;
  tanh_inplace(t);
  Eigen::MatrixXd s = a;
  logistic_inplace(s);
  for (int k = 0; k < a.cols(); ++k) {
    EXPECT_NEAR(t(0, k), std::tanh(a(0, k)), 4e-16);
    EXPECT_NEAR(s(0, k), 1.0 / (1.0 + std::exp(-a(0, k))), 4e-16);
    EXPECT_LE(std::abs(t(0, k)), 1.0);
  }
  Eigen::MatrixXd big(1, 2);
  big << 1e6, -1e6;
  tanh_inplace(big);
  EXPECT_EQ(big(0, 0), 1.0);
  EXPECT_EQ(big(0, 1), -1.0);
}

TEST(RngTest, MatchesReferenceSequence) {
  Rng rng(42);
  for (std::uint64_t v : oracle::kXoshiroSeed42) EXPECT_EQ(rng.next(), v);
  Rng u(42);
  for (double v : oracle::kUniformSeed42) EXPECT_EQ(u.uniform(), v);
  Rng b(7);
  for (std::uint64_t v : oracle::kBelow10Seed7) EXPECT_EQ(b.below(10), v);
  for (std::uint64_t s = 0; s < 3; ++s) {
    EXPECT_EQ(derive_seed(42, s), oracle::kDeriveSeed42[s]);
  }
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(2021), b(2021);
  for (int k = 0; k < 1000; ++k) ASSERT_EQ(a.next(), b.next());
}

TEST(RngTest, UniformMeanAndRange) {
  Rng rng(11);
  double sum = 0.0;
  const int n = 1000000;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(RngTest, UniformRangeNeverReturnsUpperBound) {
  Rng rng(5);
  // One-ulp interval: rounding must never land on the upper end.
  const double hi = std::nextafter(-1.0, 0.0);
  for (int k = 0; k < 100000; ++k) {
    const double u = rng_uniform(rng, -1.0, hi);
    ASSERT_GE(u, -1.0);
    ASSERT_LT(u, hi);
  }
  EXPECT_THROW(rng_uniform(rng, 1.0, 1.0), ContractViolation);
  EXPECT_THROW(rng_uniform(rng, 2.0, 1.0), ContractViolation);
}

TEST(RngTest, BelowCoversRangeAndRejectsZero) {
  Rng rng(9);
  std::set<std::uint64_t> seen;
  for (int k = 0; k < 1000; ++k) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_THROW(rng.below(0), ContractViolation);
}

TEST(RngTest, DerivedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  Rng a(derive_seed(1, 1)), b(derive_seed(1, 2));
  EXPECT_NE(a.next(), b.next());
}

}  // namespace
}  // namespace wmlstm
