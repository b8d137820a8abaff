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

#include "wmlstm/diagnostics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "wmlstm/errors.h"

namespace wmlstm {
namespace {

using Eigen::Index;

// argmax and max of x * sech^2(x) on x > 0.
constexpr double kSechPeakArg = 0.7717022860502573;
constexpr double kSechPeak = 0.44777277219005315;

Vector local_gate_grad(const CellParams& p, const StepCache& cache, Gate gate,
                       int column) {
  const auto a = cache.gate(gate).col(column).array();
  Vector delta = (a * (1.0 - a)).matrix();
  if (p.variant().kind() == CellKind::kWorkingMemory) {
    const auto t = cache.cell_term_of(gate).col(column).array();
    delta.array() *= 1.0 - t.square();
  }
  return delta;
}

Matrix connect(const CellParams& p, const Vector& delta, const Vector& c) {
  if (p.variant().shape() == ConnShape::kFull) return outer(delta, c);
  Matrix diag(delta.size(), 1);
  diag.col(0) = hadamard(delta, c);
  return diag;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

CellGateGrads closed_form_cell_gate_grad(const CellParams& p,
                                         const StepCache& cache, int column) {
  if (!p.variant().has_cell_connections()) {
    throw ContractViolation(
        "closed_form_cell_gate_grad: vanilla cells have no cell connections");
  }
  if (cache.cell_term.rows() != 3 * p.hidden_dim() || column < 0 ||
      column >= cache.c_new.cols()) {
    throw ContractViolation(
        "closed_form_cell_gate_grad: cache does not match the parameters");
  }
  const Vector c_prev = cache.c_prev.col(column);
  const Vector c_new = cache.c_new.col(column);
  return {connect(p, local_gate_grad(p, cache, Gate::kI, column), c_prev),
          connect(p, local_gate_grad(p, cache, Gate::kF, column), c_prev),
          connect(p, local_gate_grad(p, cache, Gate::kO, column), c_new)};
}

std::vector<TraceRecord> trace_forward(const CellParams& p,
                                       const std::vector<Batch>& xs,
                                       const CellState& s0) {
  if (xs.empty()) throw ContractViolation("trace_forward: empty sequence");
  std::vector<TraceRecord> out;
  CellState s = s0;
  const Index B = s0.c.cols();
  for (std::size_t t = 0; t < xs.size(); ++t) {
    StepOutput step = step_forward(p, xs[t], s, static_cast<int>(t));
    const StepCache& k = step.cache;
    const int ti = static_cast<int>(t) + 1;

    out.push_back({ti, "cell_norm", k.c_new.colwise().norm().mean()});
    for (Gate g : {Gate::kI, Gate::kF, Gate::kO}) {
      const auto a = k.gate(g).array();
      const double sat =
          ((a - 0.5).abs() > kSaturationMargin).cast<double>().mean();
      out.push_back({ti, std::string("gate_sat_") + gate_name(g), sat});
    }
    if (p.variant().has_cell_connections()) {
      double acc = 0.0;
      for (Index b = 0; b < B; ++b) {
        const Vector delta = local_gate_grad(p, k, Gate::kI, static_cast<int>(b));
        const Vector c = k.c_prev.col(b);
        // ||delta outer c||_F = ||delta|| ||c||; the diagonal case keeps
        // only delta * c.
        acc += p.variant().shape() == ConnShape::kFull
                   ? delta.norm() * c.norm()
                   : delta.cwiseProduct(c).norm();
      }
      out.push_back({ti, "wic_grad_norm", acc / static_cast<double>(B)});
    }
    s = std::move(step.state);
  }
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& rs) {
  out << "step,quantity,value\n";
  for (const auto& r : rs) {
    out << r.step << ',' << r.quantity << ',' << fmt(r.value) << '\n';
  }
}

GrowthTable gradient_growth_experiment(int hidden,
                                       std::span<const double> norms,
                                       std::uint64_t seed) {
  const int input_dim = 4;
  Rng init(seed);
  // Same stream for both: input, recurrent and cell weights coincide.
  const CellParams wmc = init_params(CellVariant::working_memory(ConnShape::kFull),
                                     input_dim, hidden, init, 0.0);
  Rng init_again(seed);
  const CellParams peep = init_params(CellVariant::peephole(ConnShape::kFull),
                                      input_dim, hidden, init_again, 0.0);
  CellParams plain(CellVariant::vanilla(), input_dim, hidden);
  plain.wx = wmc.wx;
  plain.wh = wmc.wh;
  plain.b = wmc.b;

  Rng data(derive_seed(seed, 1));
  Batch x(input_dim, 1);
  for (Index k = 0; k < x.size(); ++k) x(k) = data.uniform(-1.0, 1.0);
  Batch h(hidden, 1);
  for (Index k = 0; k < h.size(); ++k) h(k) = data.uniform(-1.0, 1.0);
  Vector u(hidden);
  for (Index k = 0; k < u.size(); ++k) u(k) = data.uniform(-1.0, 1.0);
  u /= u.norm();

  GrowthTable table;
  const Vector a = (wmc.cell_weights(Gate::kI) * u).cwiseAbs();
  double acc = 0.0;
  for (Index k = 0; k < a.size(); ++k) acc += std::pow(kSechPeak / a(k), 2);
  table.wmc_bound = 0.25 * std::sqrt(acc);

  for (double n : norms) {
    CellState s{h, Batch(u * n)};
    const StepCache kw = step_forward(wmc, x, s).cache;
    const StepCache kp = step_forward(peep, x, s).cache;
    const StepCache kv = step_forward(plain, x, s).cache;

    GrowthRow row;
    row.c_norm = n;
    row.wmc = closed_form_cell_gate_grad(wmc, kw).i.norm();
    row.peephole_raw = closed_form_cell_gate_grad(peep, kp).i.norm();
    // The vanilla cell shares every weight except the cell term, so its
    // input gate is the peephole gate with the cell contribution removed.
    const auto iv = kv.gate(Gate::kI).col(0).array();
    row.peephole_fixed = (iv * (1.0 - iv)).matrix().norm() * n;
    row.saturated_fraction =
        ((a * n).array() >= kSechPeakArg).cast<double>().mean();
    table.rows.push_back(row);
  }
  return table;
}

void write_growth_csv(std::ostream& out, const GrowthTable& table) {
  out << "c_norm,peephole_fixed,peephole_raw,wmc,saturated_fraction,"
         "wmc_bound\n";
  for (const auto& r : table.rows) {
    out << fmt(r.c_norm) << ',' << fmt(r.peephole_fixed) << ','
        << fmt(r.peephole_raw) << ',' << fmt(r.wmc) << ','
        << fmt(r.saturated_fraction) << ',' << fmt(table.wmc_bound) << '\n';
  }
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double sum_sq_h(const CellParams& p, const std::vector<Batch>& xs,
                const CellState& s0) {
  const SequenceForward f = forward_sequence(p, xs, s0);
  double loss = 0.0;
  for (const auto& s : f.states) loss += s.h.squaredNorm();
  return loss;
}

const char* tensor_name(std::size_t k, bool has_wc) {
  static const char* with[] = {"wx", "wh", "wc", "b"};
  static const char* without[] = {"wx", "wh", "b"};
  return has_wc ? with[k] : without[k];
}

}  // namespace

GradCheckResult gradient_check(CellVariant variant, int input_dim,
                               int hidden_dim, int T, std::uint64_t seed,
                               double eps, double floor) {
  if (T < 1 || eps <= 0.0) {
    throw ContractViolation("gradient_check: need T >= 1 and eps > 0");
  }
  Rng rng(seed);
  CellParams p = init_params(variant, input_dim, hidden_dim, rng, 1.0);
  std::vector<Batch> xs;
  for (int t = 0; t < T; ++t) {
    Batch x(input_dim, 1);
    for (Index k = 0; k < x.size(); ++k) x(k) = rng.uniform(-1.0, 1.0);
    xs.push_back(std::move(x));
  }
  const CellState s0 = CellState::zeros(hidden_dim, 1);

  const SequenceForward f = forward_sequence(p, xs, s0);
  std::vector<Batch> dh;
  for (const auto& s : f.states) dh.push_back(2.0 * s.h);
  const SequenceGradients g = backward_sequence(p, f.caches, dh);

  GradCheckResult res;
  auto params = p.tensors();
  const auto analytic = g.grads.tensors();
  const bool has_wc = variant.has_cell_connections();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t j = 0; j < params[k].size(); ++j) {
      double& w = params[k][j];
      const double saved = w;
      w = saved + eps;
      const double up = sum_sq_h(p, xs, s0);
      w = saved - eps;
      const double down = sum_sq_h(p, xs, s0);
      w = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][j];
      const double rel = relative_error(a, numeric, floor);
      res.max_abs_error = std::max(res.max_abs_error, std::abs(a - numeric));
      if (rel >= res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = std::string(tensor_name(k, has_wc)) + "[" +
                    std::to_string(j) + "]";
      }
      ++res.checked;
    }
  }
  return res;
}

std::vector<CellNormTrace> early_training_cell_norms(
    const ExperimentConfig& base, const std::vector<CellVariant>& variants,
    std::uint64_t seed, int updates, int probe_size) {
  std::vector<CellNormTrace> out;
  for (const CellVariant& v : variants) {
    ExperimentConfig cfg = base;
    cfg.variant = v;
    cfg.conn_shape.clear();
    const Experiment exp(cfg);
    const Model m = exp.train_steps(seed, updates);
    const SequenceBatch probe = exp.probe_batch(probe_size);
    CellNormTrace tr{v, {}};
    for (const auto& r :
         trace_forward(m.cell, probe.inputs,
                       CellState::zeros(cfg.hidden, probe.batch()))) {
      if (r.quantity == "cell_norm") tr.cell_norm.push_back(r.value);
    }
    out.push_back(std::move(tr));
  }
  return out;
}

void write_cell_norm_dat(std::ostream& out,
                         const std::vector<CellNormTrace>& traces) {
  out << "# step";
  for (const auto& t : traces) out << ' ' << t.variant.tag();
  out << '\n';
  const std::size_t n = traces.empty() ? 0 : traces.front().cell_norm.size();
  for (std::size_t s = 0; s < n; ++s) {
    out << s + 1;
    for (const auto& t : traces) out << ' ' << fmt(t.cell_norm[s]);
    out << '\n';
  }
}

}  // namespace wmlstm
