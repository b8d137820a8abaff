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

// Instrumentation for the cell-to-gate analysis: cell-norm and gate
// saturation traces, the closed-form local gradients of the gates with
// respect to their cell-connection weights, and the gradient-growth sweep
// contrasting peephole and working-memory connections.

#ifndef WMLSTM_DIAGNOSTICS_H_
#define WMLSTM_DIAGNOSTICS_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "wmlstm/cells.h"
#include "wmlstm/trainer.h"

namespace wmlstm {

// A gate counts as saturated when |gate - 0.5| > kSaturationMargin.
inline constexpr double kSaturationMargin = 0.45;

struct TraceRecord {
  int step = 0;
  std::string quantity;  // cell_norm | gate_sat_i | gate_sat_f | gate_sat_o
                         // | wic_grad_norm
  double value = 0.0;
};

// Runs the sequence and records, per step t = 1..T, the l2 norm of c_t (averaged over
// the batch columns), the saturated fraction of each sigmoid gate and, for
// cells with cell connections, the Frobenius norm of d i_t / d W_ic.
std::vector<TraceRecord> trace_forward(const CellParams& p,
                                       const std::vector<Batch>& xs,
                                       const CellState& s0);

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& rs);

// d gate / d W_gate_c for one batch column of a step:
//   working memory: (sigma'(a) * (1 - tanh^2(W c))) outer c
//   peephole:        sigma'(a) outer c
// with c = c_{t-1} for the input and forget gates and c_t for the output
// gate. Full connections give H x H matrices; diagonal ones give the H x 1
// diagonal. Throws ContractViolation for vanilla cells.
struct CellGateGrads {
  Matrix i;
  Matrix f;
  Matrix o;
};

CellGateGrads closed_form_cell_gate_grad(const CellParams& p,
                                         const StepCache& cache,
                                         int column = 0);

struct GrowthRow {
  double c_norm = 0.0;
  // ||d i / d W_ic|| for the peephole cell with the sigmoid derivative taken
  // at the pre-activation without the cell term, so only ||c|| varies.
  double peephole_fixed = 0.0;
  // Same, with the sigmoid derivative at the actual pre-activation.
  double peephole_raw = 0.0;
  double wmc = 0.0;
  // Fraction of units of W_ic c with |.| past the maximiser of x sech^2(x);
  // beyond it a unit's contribution decreases with ||c||.
  double saturated_fraction = 0.0;
};

struct GrowthTable {
  std::vector<GrowthRow> rows;
  // ||c||-independent bound on the working-memory column:
  //   (1/4) * sqrt(sum_k (m / a_k)^2),  m = max_x x sech^2(x),
  //   a_k = |(W_ic u)_k| for the unit direction u of c.
  double wmc_bound = 0.0;
};

// Fixed random weights (full connections, shared between the two cells),
// c = norm * u for a fixed random unit vector u.
GrowthTable gradient_growth_experiment(int hidden,
                                       std::span<const double> norms,
                                       std::uint64_t seed = 7);

void write_growth_csv(std::ostream& out, const GrowthTable& table);

// ---------------------------------------------------------------------------
// Gradient check

// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor>[<index>]"
};

inline constexpr double kGradCheckFloor = 1e-4;

// Loss sum_t ||h_t||^2 over a random sequence (batch 1) from random
// parameters; every parameter is compared against central differences.
GradCheckResult gradient_check(CellVariant variant, int input_dim,
                               int hidden_dim, int T, std::uint64_t seed,
                               double eps = 1e-5,
                               double floor = kGradCheckFloor);

// ---------------------------------------------------------------------------
// Early-training cell norms

struct CellNormTrace {
  CellVariant variant;
  std::vector<double> cell_norm;  // step t -> batch mean of ||c_t||
};

// Trains each variant from the same seed for `updates` steps (so input,
// recurrent and readout weights start identical) and traces ||c_t|| on the
// task's probe batch.
std::vector<CellNormTrace> early_training_cell_norms(
    const ExperimentConfig& base, const std::vector<CellVariant>& variants,
    std::uint64_t seed, int updates, int probe_size);

// Columns: step, then one column per trace.
void write_cell_norm_dat(std::ostream& out,
                         const std::vector<CellNormTrace>& traces);

}  // namespace wmlstm

#endif  // WMLSTM_DIAGNOSTICS_H_
