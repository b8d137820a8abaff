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

// Gradient clipping and parameter updates over flat tensor lists.
//
// Parameters and gradients are passed as parallel lists of spans; entry k of
// the gradient list must have the same length as entry k of the parameter
// list. Optimizer state is sized on the first update and checked afterwards.

#ifndef WMLSTM_OPTIM_H_
#define WMLSTM_OPTIM_H_

#include <cstdint>
#include <span>
#include <vector>

namespace wmlstm {

using TensorSpans = std::vector<std::span<double>>;
using ConstTensorSpans = std::vector<std::span<const double>>;

ConstTensorSpans as_const(const TensorSpans& spans);

// l2 norm over the concatenation of all entries.
double global_norm(const ConstTensorSpans& tensors);

// Rescales every entry by max_norm / norm when norm > max_norm. Returns the
// norm observed before clipping.
double clip_global_norm(const TensorSpans& grads, double max_norm);

// Nesterov momentum in velocity form:
//   v     <- momentum * v - lr * g
//   theta <- theta + momentum * v - lr * g
class SgdState {
 public:
  SgdState(double lr, double momentum);

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  friend void sgd_nesterov_update(const TensorSpans&, const ConstTensorSpans&,
                                  SgdState&);
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

void sgd_nesterov_update(const TensorSpans& params,
                         const ConstTensorSpans& grads, SgdState& st);

// Bias-corrected Adam.
class AdamState {
 public:
  explicit AdamState(double lr, double beta1 = 0.9, double beta2 = 0.999,
                     double eps = 1e-8);

  double lr() const { return lr_; }
  std::int64_t step() const { return t_; }

 private:
  friend void adam_update(const TensorSpans&, const ConstTensorSpans&,
                          AdamState&);
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

void adam_update(const TensorSpans& params, const ConstTensorSpans& grads,
                 AdamState& st);

}  // namespace wmlstm

#endif  // WMLSTM_OPTIM_H_
