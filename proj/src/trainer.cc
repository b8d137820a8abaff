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

#include "wmlstm/trainer.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "wmlstm/diagnostics.h"
#include "wmlstm/errors.h"
#include "wmlstm/weights_io.h"

namespace wmlstm {
namespace {

using Eigen::Index;

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("invalid value '" + std::string(text) + "' for " +
                      std::string(key));
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) {
      throw ConfigError("non-finite value for " + std::string(key));
    }
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + std::string(key));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

int argmax_column(const Eigen::Ref<const Batch>& m, Index col) {
  Index best = 0;
  for (Index r = 1; r < m.rows(); ++r) {
    if (m(r, col) > m(best, col)) best = r;
  }
  return static_cast<int>(best);
}

// Column-wise log-softmax in place; returns nothing, the caller reads
// log-probabilities.
void log_softmax_columns(Batch& logits) {
  for (Index b = 0; b < logits.cols(); ++b) {
    auto col = logits.col(b);
    const double m = col.maxCoeff();
    const double lse = m + std::log((col.array() - m).exp().sum());
    col.array() -= lse;
  }
}

void add_into(CellParams& acc, const CellParams& g) {
  acc.wx += g.wx;
  acc.wh += g.wh;
  acc.wc += g.wc;
  acc.b += g.b;
}

Batch one_hot_column_block(const std::vector<int>& ids, int classes) {
  Batch x = Batch::Zero(classes, static_cast<Index>(ids.size()));
  for (std::size_t b = 0; b < ids.size(); ++b) x(ids[b], static_cast<Index>(b)) = 1.0;
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

std::string task_name(TaskId task) {
  switch (task) {
    case TaskId::kAdding: return "adding";
    case TaskId::kCopy: return "copy";
    case TaskId::kSMnist: return "smnist";
    case TaskId::kPMnist: return "pmnist";
    case TaskId::kCharLm: return "charlm";
  }
  return "?";
}

TaskId parse_task(std::string_view name) {
  for (TaskId t : {TaskId::kAdding, TaskId::kCopy, TaskId::kSMnist,
                   TaskId::kPMnist, TaskId::kCharLm}) {
    if (name == task_name(t)) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(name) +
                    "' (expected sgd or adam)");
}

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  need(hidden >= 1, "hidden must be positive");
  need(batch >= 1, "batch must be positive");
  need(epochs >= 0, "epochs must be non-negative");
  need(T >= 1, "T must be positive");
  need(task != TaskId::kAdding || T >= 2, "adding needs T >= 2");
  need(lr >= 0.0, "lr must be non-negative");
  need(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  need(clip_norm >= 0.0, "clip-norm must be non-negative (0 disables)");
  need(tbptt >= 1, "tbptt must be positive");
  need(!seeds.empty(), "seeds must not be empty");
  need(batches_per_epoch >= 1, "batches-per-epoch must be positive");
  need(eval_batches >= 1, "eval-batches must be positive");
  need(eval_batch >= 1, "eval-batch must be positive");
  need(eval_every >= 1, "eval-every must be positive");
  need(train_count >= 1, "train-count must be positive");
  need(valid_count >= 0, "valid-count must be non-negative");
  need(test_count >= -1, "test-count must be -1 or non-negative");
  need(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam-beta1 must be in [0, 1)");
  need(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam-beta2 must be in [0, 1)");
  need(adam_eps > 0.0, "adam-eps must be positive");
  need(corpus_split.train > 0.0 && corpus_split.valid >= 0.0 &&
           corpus_split.test > 0.0 &&
           std::abs(corpus_split.train + corpus_split.valid +
                    corpus_split.test - 1.0) <= 1e-9,
       "corpus-split fractions must be non-negative and sum to 1");
  if (!conn_shape.empty()) {
    // Re-parse to reject a shape on a vanilla cell.
    const CellVariant v = parse_variant(variant.name(), conn_shape);
    need(v == variant, "variant and conn-shape disagree");
  }
}

std::filesystem::path ExperimentConfig::run_dir(std::uint64_t seed) const {
  return out_dir / task_name(task) / variant.tag() /
         ("seed" + std::to_string(seed));
}

void apply_config_setting(ExperimentConfig& cfg, std::string_view raw_key,
                          std::string_view value) {
  std::string key = trim(raw_key);
  std::replace(key.begin(), key.end(), '_', '-');
  const std::string v = trim(value);

  if (key == "task") {
    cfg.task = parse_task(v);
  } else if (key == "variant") {
    cfg.variant = parse_variant(
        v, cfg.conn_shape.empty() ? std::nullopt
                                  : std::optional<std::string_view>(cfg.conn_shape));
  } else if (key == "conn-shape") {
    cfg.variant = parse_variant(cfg.variant.name(), v);
    cfg.conn_shape = v;
  } else if (key == "T" || key == "t") {
    cfg.T = parse_number<int>(key, v);
  } else if (key == "hidden") {
    cfg.hidden = parse_number<int>(key, v);
  } else if (key == "batch") {
    cfg.batch = parse_number<int>(key, v);
  } else if (key == "epochs") {
    cfg.epochs = parse_number<int>(key, v);
  } else if (key == "lr") {
    cfg.lr = parse_number<double>(key, v);
  } else if (key == "momentum") {
    cfg.momentum = parse_number<double>(key, v);
  } else if (key == "clip-norm") {
    cfg.clip_norm = parse_number<double>(key, v);
  } else if (key == "optimizer") {
    cfg.optimizer = parse_optimizer(v);
  } else if (key == "tbptt") {
    cfg.tbptt = parse_number<int>(key, v);
  } else if (key == "seeds") {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(v)) {
      seeds.push_back(parse_number<std::uint64_t>(key, s));
    }
    cfg.seeds = std::move(seeds);
  } else if (key == "forget-bias") {
    cfg.forget_bias = parse_number<double>(key, v);
  } else if (key == "data-dir") {
    cfg.data_dir = v;
  } else if (key == "out") {
    cfg.out_dir = v;
  } else if (key == "trace") {
    cfg.trace = parse_bool(key, v);
  } else if (key == "batches-per-epoch") {
    cfg.batches_per_epoch = parse_number<int>(key, v);
  } else if (key == "eval-batches") {
    cfg.eval_batches = parse_number<int>(key, v);
  } else if (key == "eval-seed") {
    cfg.eval_seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "train-count") {
    cfg.train_count = parse_number<int>(key, v);
  } else if (key == "valid-count") {
    cfg.valid_count = parse_number<int>(key, v);
  } else if (key == "test-count") {
    cfg.test_count = parse_number<int>(key, v);
  } else if (key == "perm-seed") {
    cfg.perm_seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "eval-every") {
    cfg.eval_every = parse_number<int>(key, v);
  } else if (key == "eval-batch") {
    cfg.eval_batch = parse_number<int>(key, v);
  } else if (key == "corpus-file") {
    cfg.corpus_file = v;
  } else if (key == "corpus-split") {
    const auto parts = split_list(v);
    if (parts.size() != 3) {
      throw ConfigError("corpus-split expects three fractions");
    }
    cfg.corpus_split = {parse_number<double>(key, parts[0]),
                        parse_number<double>(key, parts[1]),
                        parse_number<double>(key, parts[2])};
  } else if (key == "adam-beta1") {
    cfg.adam_beta1 = parse_number<double>(key, v);
  } else if (key == "adam-beta2") {
    cfg.adam_beta2 = parse_number<double>(key, v);
  } else if (key == "adam-eps") {
    cfg.adam_eps = parse_number<double>(key, v);
  } else {
    throw ConfigError("unknown setting '" + std::string(raw_key) + "'");
  }
}

void load_config_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    try {
      apply_config_setting(cfg, std::string_view(line).substr(0, eq),
                           std::string_view(line).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
}

ExperimentConfig default_config(TaskId task) {
  ExperimentConfig cfg;
  cfg.task = task;
  switch (task) {
    case TaskId::kAdding:
      cfg.T = 200;
      break;
    case TaskId::kCopy:
      cfg.T = 100;
      break;
    case TaskId::kSMnist:
    case TaskId::kPMnist:
      cfg.T = kMnistPixels;
      break;
    case TaskId::kCharLm:
      cfg.T = 150;
      cfg.tbptt = 150;
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Model

ReadoutParams::ReadoutParams(int classes, int hidden)
    : w(Matrix::Zero(classes, hidden)), b(Vector::Zero(classes)) {
  if (classes < 1 || hidden < 1) {
    throw ContractViolation("ReadoutParams: dimensions must be positive");
  }
}

std::vector<std::span<double>> ReadoutParams::tensors() {
  return {{w.data(), static_cast<std::size_t>(w.size())},
          {b.data(), static_cast<std::size_t>(b.size())}};
}

std::vector<std::span<const double>> ReadoutParams::tensors() const {
  return {{w.data(), static_cast<std::size_t>(w.size())},
          {b.data(), static_cast<std::size_t>(b.size())}};
}

void ReadoutParams::set_zero() {
  w.setZero();
  b.setZero();
}

ReadoutParams init_readout(int classes, int hidden, Rng& rng) {
  ReadoutParams r(classes, hidden);
  const double a = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Index k = 0; k < r.w.size(); ++k) r.w.data()[k] = rng.uniform(-a, a);
  return r;
}

TensorSpans Model::tensors() {
  TensorSpans out = cell.tensors();
  for (auto s : readout.tensors()) out.push_back(s);
  return out;
}

ConstTensorSpans Model::tensors() const {
  ConstTensorSpans out = cell.tensors();
  for (auto s : readout.tensors()) out.push_back(s);
  return out;
}

ModelGrads::ModelGrads(const Model& like)
    : cell(like.cell.variant(), like.cell.input_dim(), like.cell.hidden_dim()),
      readout(like.readout.classes(), like.cell.hidden_dim()) {
  set_zero();
}

TensorSpans ModelGrads::tensors() {
  TensorSpans out = cell.tensors();
  for (auto s : readout.tensors()) out.push_back(s);
  return out;
}

void ModelGrads::set_zero() {
  cell.set_zero();
  readout.set_zero();
}

namespace {

void write_model(std::ostream& out, const Model& model) {
  write_cell_params(out, model.cell);
  write_u32_le(out, static_cast<std::uint32_t>(model.readout.classes()));
  write_u32_le(out, static_cast<std::uint32_t>(model.cell.hidden_dim()));
  for (auto s : model.readout.tensors()) write_f64_le(out, s);
}

}  // namespace

void save_model(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_model(out, model);
  if (!out) throw DataError("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  CellParams cell = read_cell_params(in);
  const std::uint32_t classes = read_u32_le(in, "readout classes");
  const std::uint32_t hidden = read_u32_le(in, "readout hidden");
  if (classes == 0 || classes > (1u << 20) ||
      hidden != static_cast<std::uint32_t>(cell.hidden_dim())) {
    throw DataError("readout header does not match the cell in " +
                    path.string());
  }
  ReadoutParams readout(static_cast<int>(classes), cell.hidden_dim());
  for (auto s : readout.tensors()) read_f64_le(in, s, "readout weights");
  return Model{std::move(cell), std::move(readout)};
}

std::uint32_t model_checksum(const Model& model) {
  std::ostringstream out(std::ios::binary);
  write_model(out, model);
  const std::string bytes = out.str();
  return crc32_of({reinterpret_cast<const unsigned char*>(bytes.data()),
                   bytes.size()});
}

// ---------------------------------------------------------------------------
// Losses

LossAndGrad mse_loss(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size() || pred.size() == 0) {
    throw ContractViolation("mse_loss: lengths differ or are zero");
  }
  const Vector d = pred - target;
  const double n = static_cast<double>(d.size());
  return {d.squaredNorm() / n, 2.0 * d / n};
}

LossAndGrad softmax_cross_entropy(const Vector& logits, int target_id) {
  if (target_id < 0 || target_id >= logits.size()) {
    throw ContractViolation("softmax_cross_entropy: target out of range");
  }
  const double m = logits.maxCoeff();
  const Vector e = (logits.array() - m).exp().matrix();
  const double z = e.sum();
  Vector grad = e / z;
  const double loss = -(logits(target_id) - m - std::log(z));
  grad(target_id) -= 1.0;
  return {loss, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Batches

SequenceBatch adding_problem(const AddingBatch& b) {
  SequenceBatch out;
  out.mode = ReadoutMode::kLastRegression;
  out.inputs = b.inputs;
  out.regression_targets = b.targets;
  return out;
}

SequenceBatch copy_problem(const CopyBatch& b) {
  SequenceBatch out;
  out.mode = ReadoutMode::kEveryStepClass;
  out.inputs = b.one_hot_inputs();
  out.step_targets.assign(b.length(), std::vector<int>(b.batch()));
  for (int s = 0; s < b.batch(); ++s) {
    for (int t = 0; t < b.length(); ++t) out.step_targets[t][s] = b.targets[s][t];
  }
  out.accuracy_from_step = b.payload_start();
  return out;
}

void BatchStats::add(const BatchStats& o) {
  loss_sum += o.loss_sum;
  scored += o.scored;
  correct += o.correct;
  counted += o.counted;
  correct_all += o.correct_all;
  counted_all += o.counted_all;
}

BatchStats run_batch(const Model& model, const SequenceBatch& batch,
                     CellState& state, ModelGrads* grads) {
  if (batch.inputs.empty()) throw ContractViolation("run_batch: empty batch");
  const int T = static_cast<int>(batch.inputs.size());
  const Index B = batch.inputs.front().cols();
  if (state.h.cols() != B) {
    throw ContractViolation("run_batch: state batch size differs from inputs");
  }
  const auto& W = model.readout.w;
  const auto& bias = model.readout.b;
  const int C = model.readout.classes();

  switch (batch.mode) {
    case ReadoutMode::kLastRegression:
      if (C != 1 || batch.regression_targets.size() != B) {
        throw ContractViolation("run_batch: regression head/targets mismatch");
      }
      break;
    case ReadoutMode::kLastClass:
      if (static_cast<Index>(batch.class_targets.size()) != B) {
        throw ContractViolation("run_batch: class targets mismatch");
      }
      break;
    case ReadoutMode::kEveryStepClass:
      if (static_cast<int>(batch.step_targets.size()) != T) {
        throw ContractViolation("run_batch: step targets mismatch");
      }
      break;
  }

  BatchStats st;
  std::vector<Batch> dh(grads ? T : 0);
  const double step_denom = static_cast<double>(T) * static_cast<double>(B);

  // Scores the readout of h_t and, when training, fills dh[t].
  auto score = [&](int t, const Batch& h) {
    switch (batch.mode) {
      case ReadoutMode::kLastRegression: {
        if (t != T - 1) return;
        const Eigen::RowVectorXd pred = (W * h).colwise() + bias;
        const Eigen::RowVectorXd diff =
            pred - batch.regression_targets.transpose();
        st.loss_sum = diff.squaredNorm();
        st.scored = static_cast<double>(B);
        if (grads) {
          const Eigen::RowVectorXd dpred = 2.0 * diff / static_cast<double>(B);
          grads->readout.w += dpred * h.transpose();
          grads->readout.b(0) += dpred.sum();
          dh[t] = W.transpose() * dpred;
        }
        return;
      }
      case ReadoutMode::kLastClass: {
        if (t != T - 1) return;
        Batch logp = (W * h).colwise() + bias;
        log_softmax_columns(logp);
        for (Index b = 0; b < B; ++b) {
          const int y = batch.class_targets[b];
          if (y < 0 || y >= C) throw ContractViolation("run_batch: bad label");
          st.loss_sum -= logp(y, b);
          if (argmax_column(logp, b) == y) st.correct += 1.0;
        }
        st.scored = st.counted = static_cast<double>(B);
        if (grads) {
          Batch dlogits = logp.array().exp().matrix();
          for (Index b = 0; b < B; ++b) dlogits(batch.class_targets[b], b) -= 1.0;
          dlogits /= static_cast<double>(B);
          grads->readout.w += dlogits * h.transpose();
          grads->readout.b += dlogits.rowwise().sum();
          dh[t] = W.transpose() * dlogits;
        }
        return;
      }
      case ReadoutMode::kEveryStepClass: {
        Batch logp = (W * h).colwise() + bias;
        log_softmax_columns(logp);
        const auto& ys = batch.step_targets[t];
        if (static_cast<Index>(ys.size()) != B) {
          throw ContractViolation("run_batch: step targets mismatch");
        }
        for (Index b = 0; b < B; ++b) {
          const int y = ys[b];
          if (y < 0 || y >= C) throw ContractViolation("run_batch: bad label");
          st.loss_sum -= logp(y, b);
          const bool hit = argmax_column(logp, b) == y;
          st.correct_all += hit;
          st.counted_all += 1.0;
          if (t >= batch.accuracy_from_step) {
            st.correct += hit;
            st.counted += 1.0;
          }
        }
        st.scored = step_denom;
        if (grads) {
          Batch dlogits = logp.array().exp().matrix();
          for (Index b = 0; b < B; ++b) dlogits(ys[b], b) -= 1.0;
          dlogits /= step_denom;
          grads->readout.w += dlogits * h.transpose();
          grads->readout.b += dlogits.rowwise().sum();
          dh[t] = W.transpose() * dlogits;
        }
        return;
      }
    }
  };

  if (!grads) {
    // Inference keeps only the running state.
    for (int t = 0; t < T; ++t) {
      state = step_forward(model.cell, batch.inputs[t], state, t).state;
      score(t, state.h);
    }
    return st;
  }

  SequenceForward fwd = forward_sequence(model.cell, batch.inputs, state);
  for (int t = 0; t < T; ++t) score(t, fwd.states[t].h);
  SequenceGradients g = backward_sequence(model.cell, fwd.caches, dh);
  add_into(grads->cell, g.grads);
  state = std::move(fwd.states.back());
  return st;
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(const ExperimentConfig& cfg)
    : clip_norm_(cfg.clip_norm),
      state_(cfg.optimizer == OptimizerKind::kSgd
                 ? std::variant<SgdState, AdamState>(
                       SgdState(cfg.lr, cfg.momentum))
                 : std::variant<SgdState, AdamState>(AdamState(
                       cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps))) {}

double Optimizer::step(Model& model, ModelGrads& grads) {
  const TensorSpans g = grads.tensors();
  const double norm = clip_norm_ > 0.0 ? clip_global_norm(g, clip_norm_)
                                       : global_norm(as_const(g));
  if (!std::isfinite(norm)) throw NumericOverflow(-1, "gradient norm");
  const TensorSpans p = model.tensors();
  if (auto* sgd = std::get_if<SgdState>(&state_)) {
    sgd_nesterov_update(p, as_const(g), *sgd);
  } else {
    adam_update(p, as_const(g), std::get<AdamState>(state_));
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Metric CSV

void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& rs) {
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : rs) {
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.3f", r.seconds);
    out << r.seed << ',' << r.epoch << ',' << r.split << ',' << r.metric << ','
        << fmt17(r.value) << ',' << secs << '\n';
  }
}

std::vector<MetricRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsCsvHeader) {
    throw DataError("metrics CSV: missing or unexpected header");
  }
  std::vector<MetricRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_list(line);
    if (f.size() != 6) {
      throw DataError("metrics CSV line " + std::to_string(lineno) +
                      ": expected 6 fields");
    }
    try {
      MetricRecord r;
      r.seed = parse_number<std::uint64_t>("seed", f[0]);
      r.epoch = parse_number<int>("epoch", f[1]);
      r.split = f[2];
      r.metric = f[3];
      r.value = parse_number<double>("value", f[4]);
      r.seconds = parse_number<double>("seconds", f[5]);
      out.push_back(std::move(r));
    } catch (const ConfigError& e) {
      throw DataError("metrics CSV line " + std::to_string(lineno) + ": " +
                      e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task data

namespace {

// Produces the training batches of one epoch. `carry` tells the loop to keep
// the recurrent state from the previous batch.
class EpochSampler {
 public:
  virtual ~EpochSampler() = default;
  virtual bool next(SequenceBatch& out, bool& carry) = 0;
};

std::vector<MetricRecord> make_records(std::uint64_t seed, int epoch,
                                       std::string_view split,
                                       std::initializer_list<
                                           std::pair<const char*, double>> kv) {
  std::vector<MetricRecord> out;
  for (const auto& [name, value] : kv) {
    out.push_back({seed, epoch, std::string(split), name, value, 0.0});
  }
  return out;
}

void require_split(bool ok, std::string_view split) {
  if (!ok) {
    throw ContractViolation("evaluate: unknown split '" + std::string(split) +
                            "'");
  }
}

}  // namespace

class TaskData {
 public:
  virtual ~TaskData() = default;
  virtual int input_dim() const = 0;
  virtual int classes() const = 0;
  // Splits evaluated after every epoch.
  virtual std::vector<std::string> eval_splits() const = 0;
  virtual std::unique_ptr<EpochSampler> epoch(Rng& data_rng) const = 0;
  virtual std::vector<MetricRecord> evaluate(const Model& m,
                                             std::string_view split,
                                             std::uint64_t seed,
                                             int epoch) const = 0;
  virtual SequenceBatch probe(int size) const = 0;
};

namespace {

// Fixed evaluation sets for generated tasks: test from eval_seed, valid from
// a derived stream.
template <typename Gen>
std::vector<SequenceBatch> fixed_sets(const ExperimentConfig& cfg,
                                      std::uint64_t seed, Gen gen) {
  Rng rng(seed);
  std::vector<SequenceBatch> out;
  for (int k = 0; k < cfg.eval_batches; ++k) out.push_back(gen(cfg.batch, rng));
  return out;
}

BatchStats run_all(const Model& m, const std::vector<SequenceBatch>& set) {
  BatchStats total;
  for (const auto& b : set) {
    CellState s = CellState::zeros(m.cell.hidden_dim(), b.batch());
    total.add(run_batch(m, b, s, nullptr));
  }
  return total;
}

class GeneratedSampler : public EpochSampler {
 public:
  using Gen = std::function<SequenceBatch(int, Rng&)>;
  GeneratedSampler(Gen gen, int batch, int count, Rng& rng)
      : gen_(std::move(gen)), batch_(batch), left_(count), rng_(rng) {}
  bool next(SequenceBatch& out, bool& carry) override {
    if (left_-- <= 0) return false;
    out = gen_(batch_, rng_);
    carry = false;
    return true;
  }

 private:
  Gen gen_;
  int batch_;
  int left_;
  Rng& rng_;
};

class AddingData : public TaskData {
 public:
  explicit AddingData(const ExperimentConfig& cfg) : cfg_(cfg) {
    test_ = fixed_sets(cfg, cfg.eval_seed, gen());
    valid_ = fixed_sets(cfg, derive_seed(cfg.eval_seed, 1), gen());
  }
  int input_dim() const override { return 2; }
  int classes() const override { return 1; }
  std::vector<std::string> eval_splits() const override { return {"test"}; }
  std::unique_ptr<EpochSampler> epoch(Rng& rng) const override {
    return std::make_unique<GeneratedSampler>(gen(), cfg_.batch,
                                              cfg_.batches_per_epoch, rng);
  }
  std::vector<MetricRecord> evaluate(const Model& m, std::string_view split,
                                     std::uint64_t seed,
                                     int epoch) const override {
    require_split(split == "test" || split == "valid", split);
    const BatchStats s = run_all(m, split == "test" ? test_ : valid_);
    return make_records(seed, epoch, split, {{"mse", s.mean_loss()}});
  }
  SequenceBatch probe(int size) const override {
    Rng rng(cfg_.eval_seed);
    return gen()(size, rng);
  }

 private:
  GeneratedSampler::Gen gen() const {
    const int T = cfg_.T;
    return [T](int b, Rng& r) { return adding_problem(gen_adding(T, b, r)); };
  }
  ExperimentConfig cfg_;
  std::vector<SequenceBatch> test_, valid_;
};

class CopyData : public TaskData {
 public:
  explicit CopyData(const ExperimentConfig& cfg) : cfg_(cfg) {
    test_ = fixed_sets(cfg, cfg.eval_seed, gen());
    valid_ = fixed_sets(cfg, derive_seed(cfg.eval_seed, 1), gen());
  }
  int input_dim() const override { return CopyBatch::kAlphabet; }
  int classes() const override { return CopyBatch::kAlphabet; }
  std::vector<std::string> eval_splits() const override { return {"test"}; }
  std::unique_ptr<EpochSampler> epoch(Rng& rng) const override {
    return std::make_unique<GeneratedSampler>(gen(), cfg_.batch,
                                              cfg_.batches_per_epoch, rng);
  }
  std::vector<MetricRecord> evaluate(const Model& m, std::string_view split,
                                     std::uint64_t seed,
                                     int epoch) const override {
    require_split(split == "test" || split == "valid", split);
    const BatchStats s = run_all(m, split == "test" ? test_ : valid_);
    return make_records(seed, epoch, split,
                        {{"accuracy", s.correct / s.counted},
                         {"accuracy_full", s.correct_all / s.counted_all},
                         {"loss", s.mean_loss()}});
  }
  SequenceBatch probe(int size) const override {
    Rng rng(cfg_.eval_seed);
    return gen()(size, rng);
  }

 private:
  GeneratedSampler::Gen gen() const {
    const int T = cfg_.T;
    return [T](int b, Rng& r) { return copy_problem(gen_copy(T, b, r)); };
  }
  ExperimentConfig cfg_;
  std::vector<SequenceBatch> test_, valid_;
};

SequenceBatch mnist_batch(const PixelSequenceDataset& d,
                          std::span<const int> idx) {
  SequenceBatch out;
  out.mode = ReadoutMode::kLastClass;
  out.inputs = d.make_inputs(idx);
  out.class_targets.reserve(idx.size());
  for (int i : idx) out.class_targets.push_back(d.label(i));
  return out;
}

class MnistSampler : public EpochSampler {
 public:
  MnistSampler(const PixelSequenceDataset& d, int batch, Rng& rng)
      : d_(d), batch_(batch), order_(d.size()) {
    std::iota(order_.begin(), order_.end(), 0);
    for (int i = d.size() - 1; i > 0; --i) {
      const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
      std::swap(order_[i], order_[j]);
    }
  }
  bool next(SequenceBatch& out, bool& carry) override {
    if (pos_ >= static_cast<int>(order_.size())) return false;
    const int n = std::min(batch_, static_cast<int>(order_.size()) - pos_);
    out = mnist_batch(d_, std::span<const int>(order_).subspan(pos_, n));
    pos_ += n;
    carry = false;
    return true;
  }

 private:
  const PixelSequenceDataset& d_;
  int batch_;
  std::vector<int> order_;
  int pos_ = 0;
};

class MnistData : public TaskData {
 public:
  explicit MnistData(const ExperimentConfig& cfg) : cfg_(cfg) {
    const auto dir = cfg.data_dir / "mnist";
    const MnistRaw train =
        load_mnist_idx(find_data_file(dir, "train-images-idx3-ubyte"),
                       find_data_file(dir, "train-labels-idx1-ubyte"));
    const MnistRaw test =
        load_mnist_idx(find_data_file(dir, "t10k-images-idx3-ubyte"),
                       find_data_file(dir, "t10k-labels-idx1-ubyte"));
    std::optional<std::vector<int>> perm;
    if (cfg.task == TaskId::kPMnist) perm = make_permutation(cfg.perm_seed);
    try {
      splits_ = make_mnist_splits(train, test, cfg.train_count,
                                  cfg.valid_count, cfg.test_count, perm);
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
  }
  int input_dim() const override { return 1; }
  int classes() const override { return 10; }
  std::vector<std::string> eval_splits() const override {
    if (splits_.valid.size() > 0) return {"valid", "test"};
    return {"test"};
  }
  std::unique_ptr<EpochSampler> epoch(Rng& rng) const override {
    return std::make_unique<MnistSampler>(splits_.train, cfg_.batch, rng);
  }
  std::vector<MetricRecord> evaluate(const Model& m, std::string_view split,
                                     std::uint64_t seed,
                                     int epoch) const override {
    const PixelSequenceDataset* d = split == "test"    ? &splits_.test
                                    : split == "valid" ? &splits_.valid
                                    : split == "train" ? &splits_.train
                                                       : nullptr;
    require_split(d != nullptr && d->size() > 0, split);
    BatchStats total;
    std::vector<int> idx;
    for (int start = 0; start < d->size(); start += cfg_.eval_batch) {
      const int n = std::min(cfg_.eval_batch, d->size() - start);
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), start);
      CellState s = CellState::zeros(m.cell.hidden_dim(), n);
      total.add(run_batch(m, mnist_batch(*d, idx), s, nullptr));
    }
    return make_records(seed, epoch, split,
                        {{"accuracy", total.correct / total.counted},
                         {"loss", total.mean_loss()}});
  }
  SequenceBatch probe(int size) const override {
    const int n = std::min(size, splits_.test.size());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return mnist_batch(splits_.test, idx);
  }
  const MnistSplits& splits() const { return splits_; }

 private:
  ExperimentConfig cfg_;
  MnistSplits splits_;
};

// `streams` contiguous slices of `ids`, read in windows of `window` steps
// with the state carried from one window to the next.
class StreamSampler : public EpochSampler {
 public:
  StreamSampler(const std::vector<int>& ids, int vocab, int streams,
                int window, int offset)
      : ids_(ids), vocab_(vocab), streams_(streams), window_(window) {
    const int usable = static_cast<int>(ids.size()) - 1 - offset;
    len_ = usable / streams;
    if (len_ < 1) {
      throw ConfigError("corpus split too short for the requested batch");
    }
    offset_ = offset;
  }
  bool next(SequenceBatch& out, bool& carry) override {
    if (pos_ >= len_) return false;
    const int T = std::min(window_, len_ - pos_);
    out = SequenceBatch{};
    out.mode = ReadoutMode::kEveryStepClass;
    out.inputs.reserve(T);
    out.step_targets.assign(T, std::vector<int>(streams_));
    std::vector<int> cur(streams_);
    for (int t = 0; t < T; ++t) {
      for (int s = 0; s < streams_; ++s) {
        const std::size_t at =
            static_cast<std::size_t>(offset_) +
            static_cast<std::size_t>(s) * len_ + pos_ + t;
        cur[s] = ids_[at];
        out.step_targets[t][s] = ids_[at + 1];
      }
      out.inputs.push_back(one_hot_column_block(cur, vocab_));
    }
    carry = pos_ > 0;
    pos_ += T;
    return true;
  }

 private:
  const std::vector<int>& ids_;
  int vocab_;
  int streams_;
  int window_;
  int len_ = 0;
  int offset_ = 0;
  int pos_ = 0;
};

}  // namespace

BatchStats evaluate_stream(const Model& m, const std::vector<int>& ids,
                           int streams, int window) {
  const int n = std::max(1, std::min(streams, static_cast<int>(ids.size()) - 1));
  StreamSampler sampler(ids, m.readout.classes(), n, window, 0);
  CellState state = CellState::zeros(m.cell.hidden_dim(), n);
  BatchStats total;
  SequenceBatch b;
  bool carry = false;
  while (sampler.next(b, carry)) total.add(run_batch(m, b, state, nullptr));
  return total;
}

namespace {

class CharData : public TaskData {
 public:
  explicit CharData(const ExperimentConfig& cfg) : cfg_(cfg) {
    const auto path = cfg.data_dir / "sotu" / cfg.corpus_file;
    if (!std::filesystem::exists(path)) {
      throw DataError("corpus not found: " + path.string());
    }
    corpus_ = encode_corpus(read_file_bytes(path), cfg.corpus_split);
    if (corpus_.vocab_size() < 2) throw DataError("corpus has fewer than 2 symbols");
  }
  int input_dim() const override { return corpus_.vocab_size(); }
  int classes() const override { return corpus_.vocab_size(); }
  std::vector<std::string> eval_splits() const override {
    if (corpus_.valid.size() > 1) return {"valid", "test"};
    return {"test"};
  }
  std::unique_ptr<EpochSampler> epoch(Rng& rng) const override {
    const int offset = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.tbptt)));
    return std::make_unique<StreamSampler>(corpus_.train, corpus_.vocab_size(),
                                           cfg_.batch, cfg_.tbptt, offset);
  }
  std::vector<MetricRecord> evaluate(const Model& m, std::string_view split,
                                     std::uint64_t seed,
                                     int epoch) const override {
    const std::vector<int>* ids = split == "test"    ? &corpus_.test
                                  : split == "valid" ? &corpus_.valid
                                  : split == "train" ? &corpus_.train
                                                     : nullptr;
    require_split(ids != nullptr && ids->size() > 1, split);
    const BatchStats s = evaluate_stream(m, *ids, cfg_.batch, cfg_.tbptt);
    return make_records(seed, epoch, split,
                        {{"bpc", s.mean_loss() / std::log(2.0)},
                         {"accuracy", s.correct_all / s.counted_all}});
  }
  SequenceBatch probe(int size) const override {
    StreamSampler s(corpus_.test, corpus_.vocab_size(), size, cfg_.tbptt, 0);
    SequenceBatch out;
    bool carry = false;
    s.next(out, carry);
    return out;
  }
  const CharCorpus& corpus() const { return corpus_; }

 private:
  ExperimentConfig cfg_;
  CharCorpus corpus_;
};

std::unique_ptr<TaskData> make_task_data(const ExperimentConfig& cfg) {
  switch (cfg.task) {
    case TaskId::kAdding: return std::make_unique<AddingData>(cfg);
    case TaskId::kCopy: return std::make_unique<CopyData>(cfg);
    case TaskId::kSMnist:
    case TaskId::kPMnist: return std::make_unique<MnistData>(cfg);
    case TaskId::kCharLm: return std::make_unique<CharData>(cfg);
  }
  throw ConfigError("unknown task");
}

}  // namespace

// ---------------------------------------------------------------------------
// Experiment

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  tune_allocator();
  cfg_.validate();
  data_ = make_task_data(cfg_);
}

Experiment::~Experiment() = default;
Experiment::Experiment(Experiment&&) noexcept = default;

int Experiment::input_dim() const { return data_->input_dim(); }
int Experiment::classes() const { return data_->classes(); }

Model Experiment::init_model(std::uint64_t seed) const {
  // Separate streams keep the cell weights independent of the readout size
  // and the readout identical across cell variants.
  Rng cell_rng(derive_seed(seed, 1));
  Rng head_rng(derive_seed(seed, 3));
  CellParams cell = init_params(cfg_.variant, input_dim(), cfg_.hidden,
                                cell_rng, cfg_.forget_bias);
  return Model{std::move(cell), init_readout(classes(), cfg_.hidden, head_rng)};
}

std::vector<MetricRecord> Experiment::evaluate(const Model& model,
                                               std::string_view split,
                                               std::uint64_t seed,
                                               int epoch) const {
  if (model.cell.input_dim() != input_dim() ||
      model.readout.classes() != classes()) {
    throw ContractViolation("evaluate: model does not fit the task");
  }
  return data_->evaluate(model, split, seed, epoch);
}

SequenceBatch Experiment::probe_batch(int size) const {
  if (size < 1) throw ContractViolation("probe_batch: size must be positive");
  return data_->probe(size);
}

namespace {

// One epoch of updates; stops early after `max_updates` when non-negative.
BatchStats train_epoch(const TaskData& data, const ExperimentConfig& cfg,
                       Model& model, Optimizer& opt, ModelGrads& grads,
                       Rng& data_rng, int epoch, int max_updates,
                       int* done = nullptr) {
  auto sampler = data.epoch(data_rng);
  SequenceBatch batch;
  bool carry = false;
  CellState state;
  BatchStats train;
  int k = 0;
  while ((max_updates < 0 || k < max_updates) && sampler->next(batch, carry)) {
    ++k;
    if (!carry || state.h.cols() != batch.batch()) {
      state = CellState::zeros(cfg.hidden, batch.batch());
    }
    try {
      grads.set_zero();
      train.add(run_batch(model, batch, state, &grads));
      opt.step(model, grads);
      if (!model.cell.all_finite()) throw NumericOverflow(-1, "parameters");
    } catch (const NumericOverflow& e) {
      throw NumericOverflow(e.step(), e.quantity() + " during epoch " +
                                          std::to_string(epoch) + " batch " +
                                          std::to_string(k));
    }
  }
  if (done) *done = k;
  return train;
}

}  // namespace

Model Experiment::train_steps(std::uint64_t seed, int updates) const {
  Model model = init_model(seed);
  Optimizer opt(cfg_);
  ModelGrads grads(model);
  Rng data_rng(derive_seed(seed, 2));
  for (int epoch = 1; updates > 0; ++epoch) {
    int done = 0;
    train_epoch(*data_, cfg_, model, opt, grads, data_rng, epoch, updates,
                &done);
    if (done == 0) break;
    updates -= done;
  }
  return model;
}

Experiment::RunResult Experiment::run_seed(
    std::uint64_t seed,
    const std::function<void(const std::vector<MetricRecord>&)>& on_epoch)
    const {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };

  RunResult result{{}, init_model(seed)};
  Model& model = result.model;
  Optimizer opt(cfg_);
  ModelGrads grads(model);
  Rng data_rng(derive_seed(seed, 2));

  auto emit_eval = [&](int epoch, std::vector<MetricRecord> recs) {
    const bool scheduled =
        epoch % cfg_.eval_every == 0 || epoch == cfg_.epochs;
    for (const auto& split : scheduled ? data_->eval_splits()
                                       : std::vector<std::string>{}) {
      for (auto& r : data_->evaluate(model, split, seed, epoch)) {
        recs.push_back(std::move(r));
      }
    }
    const double secs = elapsed();
    for (auto& r : recs) {
      r.seconds = secs;
      if (!std::isfinite(r.value)) {
        throw NumericOverflow(-1, r.split + " " + r.metric + " at epoch " +
                                      std::to_string(epoch));
      }
    }
    if (on_epoch) on_epoch(recs);
    result.records.insert(result.records.end(), recs.begin(), recs.end());
  };

  emit_eval(0, {});
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    const BatchStats train = train_epoch(*data_, cfg_, model, opt, grads,
                                         data_rng, epoch, -1);
    emit_eval(epoch, {{seed, epoch, "train", "loss", train.mean_loss(), 0.0}});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Driver

std::vector<MetricRecord> train_experiment(const ExperimentConfig& cfg) {
  const Experiment exp(cfg);
  std::vector<MetricRecord> all;
  for (std::uint64_t seed : cfg.seeds) {
    const auto dir = cfg.run_dir(seed);
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "metrics.csv");
    if (!csv) throw DataError("cannot write " + (dir / "metrics.csv").string());
    csv << kMetricsCsvHeader << '\n';

    if (cfg.trace) {
      const Model init = exp.init_model(seed);
      const SequenceBatch probe = exp.probe_batch(std::min(cfg.batch, 16));
      std::ofstream tr(dir / "traces_init.csv");
      write_trace_csv(tr, trace_forward(init.cell, probe.inputs,
                                        CellState::zeros(cfg.hidden, probe.batch())));
    }

    const std::string label = task_name(cfg.task) + "/" + cfg.variant.tag() +
                              " seed " + std::to_string(seed);
    auto on_epoch = [&](const std::vector<MetricRecord>& recs) {
      std::ostringstream rows;
      write_metrics_csv(rows, recs);
      const std::string text = rows.str();
      csv << text.substr(text.find('\n') + 1);
      csv.flush();
      std::fprintf(stderr, "[%s] epoch %d/%d", label.c_str(),
                   recs.front().epoch, cfg.epochs);
      for (const auto& r : recs) {
        std::fprintf(stderr, " %s/%s=%.4g", r.split.c_str(), r.metric.c_str(),
                     r.value);
      }
      std::fprintf(stderr, " (%.1fs)\n", recs.front().seconds);
    };
    Experiment::RunResult run = exp.run_seed(seed, on_epoch);
    save_model(dir / "weights.bin", run.model);

    if (cfg.trace) {
      const SequenceBatch probe = exp.probe_batch(std::min(cfg.batch, 16));
      std::ofstream tr(dir / "traces.csv");
      write_trace_csv(tr, trace_forward(run.model.cell, probe.inputs,
                                        CellState::zeros(cfg.hidden, probe.batch())));
    }
    all.insert(all.end(), run.records.begin(), run.records.end());
  }
  return all;
}

std::vector<MetricRecord> evaluate(std::string_view split, const Model& model,
                                   const ExperimentConfig& cfg) {
  const Experiment exp(cfg);
  return exp.evaluate(model, split, cfg.seeds.front(), 0);
}

std::vector<AggregateRow> aggregate_runs(const std::vector<MetricRecord>& rs) {
  using Key = std::tuple<std::string, std::string, int>;
  std::map<Key, std::vector<std::pair<std::uint64_t, double>>> groups;
  for (const auto& r : rs) {
    groups[{r.split, r.metric, r.epoch}].push_back({r.seed, r.value});
  }
  std::vector<AggregateRow> out;
  for (auto& [key, vals] : groups) {
    // Fixed summation order regardless of the input order.
    std::sort(vals.begin(), vals.end());
    const double n = static_cast<double>(vals.size());
    double sum = 0.0;
    for (const auto& v : vals) sum += v.second;
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& v : vals) ss += (v.second - mean) * (v.second - mean);
    const double sem = vals.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n)
                                       : 0.0;
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), mean,
                   sem, static_cast<int>(vals.size())});
  }
  std::sort(out.begin(), out.end(), [](const AggregateRow& a, const AggregateRow& b) {
    return std::tie(a.split, a.metric, a.epoch) < std::tie(b.split, b.metric, b.epoch);
  });
  return out;
}

void write_aggregate_csv(std::ostream& out,
                         const std::vector<AggregateRow>& rows) {
  out << "split,metric,epoch,mean,sem,n\n";
  for (const auto& r : rows) {
    out << r.split << ',' << r.metric << ',' << r.epoch << ',' << fmt17(r.mean)
        << ',' << fmt17(r.sem) << ',' << r.n << '\n';
  }
}

}  // namespace wmlstm
