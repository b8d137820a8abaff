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

// LSTM cells: vanilla, peephole and working-memory connections.
//
// All three variants share one stacked parameter layout. With H hidden units
// and I inputs:
//
//   wx  4H x I   rows [g; i; f; o]
//   wh  4H x H   rows [g; i; f; o]
//   wc  3H x H   rows [i; f; o]   (full cell connections)
//       3H x 1                    (diagonal cell connections)
//       0 x 0                     (vanilla)
//   b   4H       [g; i; f; o]
//
// One step, with T(.) the cell term of the variant:
//
//   g   = tanh(Wgx x + Wgh h + bg)
//   i   = sigmoid(Wix x + Wih h + T_i(c_prev) + bi)
//   f   = sigmoid(Wfx x + Wfh h + T_f(c_prev) + bf)
//   c   = f * c_prev + i * g
//   o   = sigmoid(Wox x + Woh h + T_o(c) + bo)      <- uses the new c
//   h   = o * tanh(c)
//
//   vanilla          T(c) = 0
//   peephole         T(c) = Wc c          (Wc diagonal or full)
//   working memory   T(c) = tanh(Wc c)
//
// Everything is batched: activations are H x B with one column per sequence.
// A single sequence is simply B = 1.

#ifndef WMLSTM_CELLS_H_
#define WMLSTM_CELLS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmlstm/numerics.h"

namespace wmlstm {

enum class CellKind : std::uint8_t {
  kVanilla = 0,
  kPeephole = 1,
  kWorkingMemory = 2,
};

enum class ConnShape : std::uint8_t {
  kNone = 0,
  kDiagonal = 1,
  kFull = 2,
};

enum class Gate { kG = 0, kI = 1, kF = 2, kO = 3 };

const char* gate_name(Gate gate);

class CellVariant {
 public:
  static CellVariant vanilla();
  static CellVariant peephole(ConnShape shape = ConnShape::kDiagonal);
  static CellVariant working_memory(ConnShape shape = ConnShape::kFull);
  // Throws ContractViolation for a shape that does not fit the kind.
  static CellVariant make(CellKind kind, ConnShape shape);

  CellKind kind() const { return kind_; }
  ConnShape shape() const { return shape_; }
  bool has_cell_connections() const { return kind_ != CellKind::kVanilla; }
  bool is_default_shape() const;

  // "vanilla", "peephole", "wmc".
  std::string name() const;
  // name() plus a shape suffix when the shape is not the kind's default.
  std::string tag() const;

  bool operator==(const CellVariant&) const = default;

 private:
  CellVariant(CellKind kind, ConnShape shape) : kind_(kind), shape_(shape) {}

  CellKind kind_;
  ConnShape shape_;
};

// Accepts vanilla | peephole | wmc and diag | full. Throws ConfigError.
CellVariant parse_variant(std::string_view name,
                          std::optional<std::string_view> shape = {});

// Learnable cell weights. The same type doubles as the gradient accumulator
// (CellGrads), which keeps the two shape-congruent by construction.
class CellParams {
 public:
  CellParams(CellVariant variant, int input_dim, int hidden_dim);

  const CellVariant& variant() const { return variant_; }
  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }

  Matrix wx;
  Matrix wh;
  Matrix wc;
  Vector b;

  auto input_weights(Gate gate) { return wx.middleRows(row(gate), hidden_dim_); }
  auto input_weights(Gate gate) const {
    return wx.middleRows(row(gate), hidden_dim_);
  }
  auto recurrent_weights(Gate gate) {
    return wh.middleRows(row(gate), hidden_dim_);
  }
  auto recurrent_weights(Gate gate) const {
    return wh.middleRows(row(gate), hidden_dim_);
  }
  // Full: H x H. Diagonal: H x 1. Not available for g or for vanilla cells.
  auto cell_weights(Gate gate) { return wc.middleRows(cell_row(gate), hidden_dim_); }
  auto cell_weights(Gate gate) const {
    return wc.middleRows(cell_row(gate), hidden_dim_);
  }
  auto bias(Gate gate) { return b.segment(row(gate), hidden_dim_); }
  auto bias(Gate gate) const { return b.segment(row(gate), hidden_dim_); }

  // Storage in serialisation order: W_gx..W_ox, W_gh..W_oh, W_ic..W_oc,
  // b_g..b_o. Each span is one stacked matrix; the gate blocks inside it are
  // contiguous and already in field order.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t num_values() const;

  void set_zero();
  bool all_finite() const;
  bool same_shape(const CellParams& other) const;

 private:
  Eigen::Index row(Gate gate) const {
    return static_cast<Eigen::Index>(gate) * hidden_dim_;
  }
  Eigen::Index cell_row(Gate gate) const;

  CellVariant variant_;
  int input_dim_;
  int hidden_dim_;
};

using CellGrads = CellParams;

// Every weight uniform in [-1/sqrt(H), 1/sqrt(H)), drawn in storage order
// (wx, wh, wc); b_f = forget_bias, other biases zero. Input and recurrent
// weights therefore coincide across variants for the same seed.
CellParams init_params(CellVariant variant, int input_dim, int hidden_dim,
                       Rng& rng, double forget_bias = 1.0);

struct CellState {
  Batch h;
  Batch c;

  static CellState zeros(int hidden_dim, int batch);
  int batch() const { return static_cast<int>(h.cols()); }
};

// Forward intermediates of one step, kept for the backward pass.
struct StepCache {
  int step = 0;
  Batch x;
  Batch h_prev;
  Batch c_prev;
  Batch pre;        // 4H x B gate pre-activations [g; i; f; o]
  Batch gates;      // 4H x B activations [g; i; f; o]
  Batch cell_term;  // 3H x B [T_i(c_prev); T_f(c_prev); T_o(c_new)]
  Batch c_new;
  Batch tanh_c_new;

  int hidden_dim() const { return static_cast<int>(c_new.rows()); }
  auto gate(Gate g) const {
    return gates.middleRows(static_cast<Eigen::Index>(g) * hidden_dim(),
                            hidden_dim());
  }
  auto pre_activation(Gate g) const {
    return pre.middleRows(static_cast<Eigen::Index>(g) * hidden_dim(),
                          hidden_dim());
  }
  // Cell term feeding gate i, f or o.
  auto cell_term_of(Gate g) const {
    return cell_term.middleRows(
        (static_cast<Eigen::Index>(g) - 1) * hidden_dim(), hidden_dim());
  }
  Batch h_new() const;
};

struct StepOutput {
  CellState state;
  StepCache cache;
};

// `step` only labels overflow errors. Throws NumericOverflow naming the step
// and the gate whose pre-activation (or the cell) became non-finite.
StepOutput step_forward(const CellParams& p, const Eigen::Ref<const Batch>& x,
                        const CellState& s, int step = 0);

struct StepGradients {
  Batch dh_prev;
  Batch dc_prev;
  Batch dx;
};

// Reverse-mode through one step. `dh` and `dc` are dL/dh_t and dL/dc_t
// arriving from outside the step (readout, next step). Parameter gradients
// are accumulated into `grads`.
StepGradients step_backward(const CellParams& p, const StepCache& cache,
                            const Eigen::Ref<const Batch>& dh,
                            const Eigen::Ref<const Batch>& dc,
                            CellGrads& grads);

struct SequenceForward {
  std::vector<CellState> states;  // states[t] is the state after step t
  std::vector<StepCache> caches;
};

// Rejects empty sequences.
SequenceForward forward_sequence(const CellParams& p,
                                 const std::vector<Batch>& xs,
                                 const CellState& s0);

struct SequenceGradients {
  CellGrads grads;
  std::vector<Batch> dx;  // filled only when requested
  Batch dh0;
  Batch dc0;
};

// Full BPTT. dh_per_step[t] is dL/dh_t from the loss at step t; an empty
// matrix stands for zero.
SequenceGradients backward_sequence(const CellParams& p,
                                    const std::vector<StepCache>& caches,
                                    const std::vector<Batch>& dh_per_step,
                                    bool want_dx = false);

}  // namespace wmlstm

#endif  // WMLSTM_CELLS_H_
