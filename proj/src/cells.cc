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

#include "wmlstm/cells.h"

#include <cmath>
#include <string>

#include "wmlstm/errors.h"

namespace wmlstm {
namespace {

using Eigen::Index;

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

std::string dims(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void check_finite(const Eigen::Ref<const Batch>& block, int step,
                  const char* gate) {
  if (!block.allFinite()) {
    throw NumericOverflow(step, std::string("gate ") + gate);
  }
}

// out = T(c) for `rows` consecutive cell-connection rows starting at `first`.
void apply_cell_connection(const CellParams& p, Index first, Index rows,
                           const Batch& c, Eigen::Ref<Batch> out) {
  const Index H = p.hidden_dim();
  if (p.variant().shape() == ConnShape::kFull) {
    out.noalias() = p.wc.middleRows(first, rows) * c;
  } else {
    for (Index blk = 0; blk < rows / H; ++blk) {
      const auto w = p.wc.col(0).segment(first + blk * H, H).array();
      out.middleRows(blk * H, H) = (c.array().colwise() * w).matrix();
    }
  }
  if (p.variant().kind() == CellKind::kWorkingMemory) tanh_inplace(out);
}

// Given dL/dT for the cell-term rows [first, first + rows), accumulate the
// weight gradient and return dL/dc through those rows into dc.
void backprop_cell_connection(const CellParams& p, const StepCache& cache,
                              Index first, Index rows, const Batch& c,
                              const Batch& d_term, CellGrads& grads,
                              Batch& dc) {
  const Index H = p.hidden_dim();
  Batch du = d_term;
  if (p.variant().kind() == CellKind::kWorkingMemory) {
    const auto t = cache.cell_term.middleRows(first, rows).array();
    du.array() *= 1.0 - t.square();
  }
  if (p.variant().shape() == ConnShape::kFull) {
    grads.wc.middleRows(first, rows).noalias() += du * c.transpose();
    dc.noalias() += p.wc.middleRows(first, rows).transpose() * du;
  } else {
    for (Index blk = 0; blk < rows / H; ++blk) {
      const auto dub = du.middleRows(blk * H, H).array();
      const auto w = p.wc.col(0).segment(first + blk * H, H).array();
      grads.wc.col(0).segment(first + blk * H, H) +=
          (dub * c.array()).rowwise().sum().matrix();
      dc.array() += dub.colwise() * w;
    }
  }
}

}  // namespace

const char* gate_name(Gate gate) {
  switch (gate) {
    case Gate::kG: return "g";
    case Gate::kI: return "i";
    case Gate::kF: return "f";
    case Gate::kO: return "o";
  }
  return "?";
}

CellVariant CellVariant::vanilla() {
  return {CellKind::kVanilla, ConnShape::kNone};
}

CellVariant CellVariant::peephole(ConnShape shape) {
  return make(CellKind::kPeephole, shape);
}

CellVariant CellVariant::working_memory(ConnShape shape) {
  return make(CellKind::kWorkingMemory, shape);
}

CellVariant CellVariant::make(CellKind kind, ConnShape shape) {
  const bool needs_shape = kind != CellKind::kVanilla;
  if (needs_shape == (shape == ConnShape::kNone)) {
    throw ContractViolation(
        "cell variant: vanilla cells take no connection shape, peephole and "
        "working-memory cells need one");
  }
  return {kind, shape};
}

bool CellVariant::is_default_shape() const {
  switch (kind_) {
    case CellKind::kVanilla: return true;
    case CellKind::kPeephole: return shape_ == ConnShape::kDiagonal;
    case CellKind::kWorkingMemory: return shape_ == ConnShape::kFull;
  }
  return true;
}

std::string CellVariant::name() const {
  switch (kind_) {
    case CellKind::kVanilla: return "vanilla";
    case CellKind::kPeephole: return "peephole";
    case CellKind::kWorkingMemory: return "wmc";
  }
  return "?";
}

std::string CellVariant::tag() const {
  if (is_default_shape()) return name();
  return name() + (shape_ == ConnShape::kFull ? "-full" : "-diag");
}

CellVariant parse_variant(std::string_view name,
                          std::optional<std::string_view> shape) {
  std::optional<ConnShape> conn;
  if (shape) {
    if (*shape == "diag") {
      conn = ConnShape::kDiagonal;
    } else if (*shape == "full") {
      conn = ConnShape::kFull;
    } else {
      throw ConfigError("unknown connection shape '" + std::string(*shape) +
                        "' (expected diag or full)");
    }
  }
  if (name == "vanilla") {
    if (conn) {
      throw ConfigError("vanilla cells take no connection shape");
    }
    return CellVariant::vanilla();
  }
  if (name == "peephole")
    return CellVariant::peephole(conn.value_or(ConnShape::kDiagonal));
  if (name == "wmc")
    return CellVariant::working_memory(conn.value_or(ConnShape::kFull));
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected vanilla, peephole or wmc)");
}

CellParams::CellParams(CellVariant variant, int input_dim, int hidden_dim)
    : variant_(variant), input_dim_(input_dim), hidden_dim_(hidden_dim) {
  require(input_dim >= 1 && hidden_dim >= 1,
          "CellParams: dimensions must be positive");
  const Index H = hidden_dim;
  wx = Matrix::Zero(4 * H, input_dim);
  wh = Matrix::Zero(4 * H, H);
  switch (variant.shape()) {
    case ConnShape::kNone: wc = Matrix(0, 0); break;
    case ConnShape::kDiagonal: wc = Matrix::Zero(3 * H, 1); break;
    case ConnShape::kFull: wc = Matrix::Zero(3 * H, H); break;
  }
  b = Vector::Zero(4 * H);
}

Index CellParams::cell_row(Gate gate) const {
  require(variant_.has_cell_connections(),
          "cell_weights: vanilla cells have no cell connections");
  require(gate != Gate::kG, "cell_weights: the block input has no cell term");
  return (static_cast<Index>(gate) - 1) * hidden_dim_;
}

std::vector<std::span<double>> CellParams::tensors() {
  std::vector<std::span<double>> out = {
      {wx.data(), static_cast<std::size_t>(wx.size())},
      {wh.data(), static_cast<std::size_t>(wh.size())}};
  if (wc.size() > 0) out.push_back({wc.data(), static_cast<std::size_t>(wc.size())});
  out.push_back({b.data(), static_cast<std::size_t>(b.size())});
  return out;
}

std::vector<std::span<const double>> CellParams::tensors() const {
  std::vector<std::span<const double>> out;
  for (auto t : const_cast<CellParams*>(this)->tensors()) out.emplace_back(t);
  return out;
}

std::size_t CellParams::num_values() const {
  return static_cast<std::size_t>(wx.size() + wh.size() + wc.size() + b.size());
}

void CellParams::set_zero() {
  wx.setZero();
  wh.setZero();
  wc.setZero();
  b.setZero();
}

bool CellParams::all_finite() const {
  return wx.allFinite() && wh.allFinite() && wc.allFinite() && b.allFinite();
}

bool CellParams::same_shape(const CellParams& other) const {
  return variant_ == other.variant_ && input_dim_ == other.input_dim_ &&
         hidden_dim_ == other.hidden_dim_;
}

CellParams init_params(CellVariant variant, int input_dim, int hidden_dim,
                       Rng& rng, double forget_bias) {
  CellParams p(variant, input_dim, hidden_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (auto* m : {&p.wx, &p.wh, &p.wc}) {
    for (Index k = 0; k < m->size(); ++k)
      m->data()[k] = rng.uniform(-bound, bound);
  }
  p.bias(Gate::kF).setConstant(forget_bias);
  return p;
}

CellState CellState::zeros(int hidden_dim, int batch) {
  return {Batch::Zero(hidden_dim, batch), Batch::Zero(hidden_dim, batch)};
}

Batch StepCache::h_new() const {
  return gate(Gate::kO).cwiseProduct(tanh_c_new);
}

StepOutput step_forward(const CellParams& p, const Eigen::Ref<const Batch>& x,
                        const CellState& s, int step) {
  const Index H = p.hidden_dim();
  const Index B = x.cols();
  require(x.rows() == p.input_dim(),
          "step_forward: input has " + std::to_string(x.rows()) +
              " rows, cell expects " + std::to_string(p.input_dim()));
  require(s.h.rows() == H && s.h.cols() == B && s.c.rows() == H &&
              s.c.cols() == B,
          "step_forward: state is " + dims(s.h.rows(), s.h.cols()) + "/" +
              dims(s.c.rows(), s.c.cols()) + ", expected " + dims(H, B));

  StepOutput out;
  StepCache& k = out.cache;
  k.step = step;
  k.x = x;
  k.h_prev = s.h;
  k.c_prev = s.c;

  k.pre.noalias() = p.wx * x;
  k.pre.noalias() += p.wh * s.h;
  k.pre.colwise() += p.b;

  const bool has_conn = p.variant().has_cell_connections();
  if (has_conn) {
    k.cell_term.resize(3 * H, B);
    apply_cell_connection(p, 0, 2 * H, k.c_prev, k.cell_term.topRows(2 * H));
    k.pre.middleRows(H, 2 * H) += k.cell_term.topRows(2 * H);
  }
  for (Gate g : {Gate::kG, Gate::kI, Gate::kF}) {
    check_finite(k.pre.middleRows(static_cast<Index>(g) * H, H), step,
                 gate_name(g));
  }

  k.gates.resize(4 * H, B);
  k.gates.topRows(3 * H) = k.pre.topRows(3 * H);
  tanh_inplace(k.gates.topRows(H));
  logistic_inplace(k.gates.middleRows(H, 2 * H));

  k.c_new = k.gates.middleRows(2 * H, H).cwiseProduct(k.c_prev) +
            k.gates.middleRows(H, H).cwiseProduct(k.gates.topRows(H));
  if (!k.c_new.allFinite()) throw NumericOverflow(step, "cell state");

  if (has_conn) {
    apply_cell_connection(p, 2 * H, H, k.c_new, k.cell_term.bottomRows(H));
    k.pre.bottomRows(H) += k.cell_term.bottomRows(H);
  }
  check_finite(k.pre.bottomRows(H), step, "o");
  k.gates.bottomRows(H) = k.pre.bottomRows(H);
  logistic_inplace(k.gates.bottomRows(H));

  k.tanh_c_new = k.c_new;
  tanh_inplace(k.tanh_c_new);

  out.state.c = k.c_new;
  out.state.h = k.gates.bottomRows(H).cwiseProduct(k.tanh_c_new);
  return out;
}

StepGradients step_backward(const CellParams& p, const StepCache& cache,
                            const Eigen::Ref<const Batch>& dh,
                            const Eigen::Ref<const Batch>& dc,
                            CellGrads& grads) {
  const Index H = p.hidden_dim();
  const Index B = cache.c_new.cols();
  require(grads.same_shape(p), "step_backward: gradient buffer shape mismatch");
  require(cache.c_new.rows() == H && cache.x.rows() == p.input_dim() &&
              cache.gates.rows() == 4 * H,
          "step_backward: cache does not belong to these parameters");
  require(dh.rows() == H && dh.cols() == B && dc.rows() == H && dc.cols() == B,
          "step_backward: upstream gradients must be " + dims(H, B));

  const auto g = cache.gates.topRows(H).array();
  const auto i = cache.gates.middleRows(H, H).array();
  const auto f = cache.gates.middleRows(2 * H, H).array();
  const auto o = cache.gates.bottomRows(H).array();
  const auto tc = cache.tanh_c_new.array();

  Batch da(4 * H, B);
  da.bottomRows(H) = (dh.array() * tc * o * (1.0 - o)).matrix();

  // dL/dc_t: from outside, through h_t = o * tanh(c_t), and through the
  // output gate's cell term, which reads c_t.
  Batch dct = (dc.array() + dh.array() * o * (1.0 - tc.square())).matrix();
  const bool has_conn = p.variant().has_cell_connections();
  if (has_conn) {
    backprop_cell_connection(p, cache, 2 * H, H, cache.c_new,
                             da.bottomRows(H), grads, dct);
  }

  da.topRows(H) = (dct.array() * i * (1.0 - g.square())).matrix();
  da.middleRows(H, H) = (dct.array() * g * i * (1.0 - i)).matrix();
  da.middleRows(2 * H, H) =
      (dct.array() * cache.c_prev.array() * f * (1.0 - f)).matrix();

  StepGradients out;
  out.dc_prev = (dct.array() * f).matrix();
  if (has_conn) {
    backprop_cell_connection(p, cache, 0, 2 * H, cache.c_prev,
                             da.middleRows(H, 2 * H), grads, out.dc_prev);
  }

  grads.wx.noalias() += da * cache.x.transpose();
  grads.wh.noalias() += da * cache.h_prev.transpose();
  grads.b += da.rowwise().sum();

  out.dh_prev.noalias() = p.wh.transpose() * da;
  out.dx.noalias() = p.wx.transpose() * da;
  return out;
}

SequenceForward forward_sequence(const CellParams& p,
                                 const std::vector<Batch>& xs,
                                 const CellState& s0) {
  require(!xs.empty(), "forward_sequence: empty input sequence");
  SequenceForward out;
  out.states.reserve(xs.size());
  out.caches.reserve(xs.size());
  const CellState* prev = &s0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    StepOutput step = step_forward(p, xs[t], *prev, static_cast<int>(t));
    out.states.push_back(std::move(step.state));
    out.caches.push_back(std::move(step.cache));
    prev = &out.states.back();
  }
  return out;
}

SequenceGradients backward_sequence(const CellParams& p,
                                    const std::vector<StepCache>& caches,
                                    const std::vector<Batch>& dh_per_step,
                                    bool want_dx) {
  require(!caches.empty(), "backward_sequence: no cached steps");
  require(dh_per_step.size() == caches.size(),
          "backward_sequence: " + std::to_string(dh_per_step.size()) +
              " upstream gradients for " + std::to_string(caches.size()) +
              " steps");
  const Index H = p.hidden_dim();
  const Index B = caches.front().c_new.cols();

  SequenceGradients out{CellGrads(p.variant(), p.input_dim(), p.hidden_dim()),
                        {}, Batch::Zero(H, B), Batch::Zero(H, B)};
  if (want_dx) out.dx.resize(caches.size());

  Batch dh = Batch::Zero(H, B);
  Batch dc = Batch::Zero(H, B);
  for (std::size_t t = caches.size(); t-- > 0;) {
    const Batch& ext = dh_per_step[t];
    if (ext.size() != 0) {
      require(ext.rows() == H && ext.cols() == B,
              "backward_sequence: upstream gradient at step " +
                  std::to_string(t) + " has the wrong shape");
      dh += ext;
    }
    StepGradients sg = step_backward(p, caches[t], dh, dc, out.grads);
    dh = std::move(sg.dh_prev);
    dc = std::move(sg.dc_prev);
    if (want_dx) out.dx[t] = std::move(sg.dx);
  }
  out.dh0 = std::move(dh);
  out.dc0 = std::move(dc);
  return out;
}

}  // namespace wmlstm
