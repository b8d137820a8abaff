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

// Dense linear algebra types, reference kernels and the pinned PRNG.
//
// Storage is Eigen. Weight matrices are row-major so each gate block of a
// stacked weight matrix is one contiguous run of doubles. Batched activations
// are column-major with one column per sequence.

#ifndef WMLSTM_NUMERICS_H_
#define WMLSTM_NUMERICS_H_

#include <array>
#include <cstdint>
#include <limits>

#include <Eigen/Dense>

namespace wmlstm {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
// hidden x batch (or input x batch); column b belongs to sequence b.
using Batch = Eigen::MatrixXd;

// out[i] = sum_j m(i, j) * v[j], summed in ascending j.
Vector matvec(const Matrix& m, const Vector& v);
// out(i, j) = a[i] * b[j].
Matrix outer(const Vector& a, const Vector& b);
Vector hadamard(const Vector& a, const Vector& b);
double l2_norm(const Vector& v);

// Vectorised activations. tanh is evaluated through exp so it shares the
// SIMD path; tanh(0) and logistic(0) are exact.
void logistic_inplace(Eigen::Ref<Eigen::MatrixXd> a);
void tanh_inplace(Eigen::Ref<Eigen::MatrixXd> a);

// xoshiro256++ seeded through splitmix64. Satisfies
// UniformRandomBitGenerator so it can drive <algorithm> routines, although
// everything in this project uses the explicit helpers below to stay
// independent of standard-library distribution implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return next(); }
  std::uint64_t next();

  // 53-bit uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi); never returns hi.
  double uniform(double lo, double hi);
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::array<std::uint64_t, 4> s_;
};

double rng_uniform(Rng& rng, double lo, double hi);

// Mixes a seed with a stream tag; used to give each consumer (init, data,
// evaluation) its own independent stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Keeps the allocator from returning per-step activation buffers to the OS
// (glibc only; a no-op elsewhere). Safe to call repeatedly.
void tune_allocator();

}  // namespace wmlstm

#endif  // WMLSTM_NUMERICS_H_
