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

#include "wmlstm/optim.h"

#include <cmath>
#include <string>

#include "wmlstm/errors.h"

namespace wmlstm {
namespace {

void check_congruent(const TensorSpans& params, const ConstTensorSpans& grads,
                     const std::vector<std::vector<double>>& state,
                     const char* who) {
  bool ok = params.size() == grads.size();
  for (std::size_t k = 0; ok && k < params.size(); ++k) {
    ok = params[k].size() == grads[k].size();
  }
  if (ok && !state.empty()) {
    ok = state.size() == params.size();
    for (std::size_t k = 0; ok && k < params.size(); ++k) {
      ok = state[k].size() == params[k].size();
    }
  }
  if (!ok) {
    throw ContractViolation(std::string(who) +
                            ": parameter, gradient and state shapes differ");
  }
}

void size_like(std::vector<std::vector<double>>& state,
               const TensorSpans& params) {
  if (!state.empty()) return;
  state.reserve(params.size());
  for (auto p : params) state.emplace_back(p.size(), 0.0);
}

}  // namespace

ConstTensorSpans as_const(const TensorSpans& spans) {
  return ConstTensorSpans(spans.begin(), spans.end());
}

double global_norm(const ConstTensorSpans& tensors) {
  double acc = 0.0;
  for (auto t : tensors)
    for (double v : t) acc += v * v;
  return std::sqrt(acc);
}

double clip_global_norm(const TensorSpans& grads, double max_norm) {
  if (!(max_norm > 0.0)) {
    throw ContractViolation("clip_global_norm: max_norm must be positive");
  }
  const double norm = global_norm(as_const(grads));
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto t : grads)
      for (double& v : t) v *= scale;
  }
  return norm;
}

SgdState::SgdState(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr >= 0.0)) throw ContractViolation("SgdState: lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ContractViolation("SgdState: momentum must be in [0, 1)");
  }
}

void sgd_nesterov_update(const TensorSpans& params,
                         const ConstTensorSpans& grads, SgdState& st) {
  check_congruent(params, grads, st.velocity_, "sgd_nesterov_update");
  size_like(st.velocity_, params);
  const double mu = st.momentum_;
  const double lr = st.lr_;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& vel = st.velocity_[k];
    const auto g = grads[k];
    auto theta = params[k];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      vel[j] = mu * vel[j] - lr * g[j];
      theta[j] += mu * vel[j] - lr * g[j];
    }
  }
}

AdamState::AdamState(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0)) throw ContractViolation("AdamState: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractViolation("AdamState: betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ContractViolation("AdamState: eps must be positive");
}

void adam_update(const TensorSpans& params, const ConstTensorSpans& grads,
                 AdamState& st) {
  check_congruent(params, grads, st.m_, "adam_update");
  size_like(st.m_, params);
  size_like(st.v_, params);
  ++st.t_;
  const double t = static_cast<double>(st.t_);
  const double c1 = 1.0 - std::pow(st.beta1_, t);
  const double c2 = 1.0 - std::pow(st.beta2_, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = st.m_[k];
    auto& v = st.v_[k];
    const auto g = grads[k];
    auto theta = params[k];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = st.beta1_ * m[j] + (1.0 - st.beta1_) * g[j];
      v[j] = st.beta2_ * v[j] + (1.0 - st.beta2_) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= st.lr_ * m_hat / (std::sqrt(v_hat) + st.eps_);
    }
  }
}

}  // namespace wmlstm
