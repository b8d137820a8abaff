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

// Acceptance gate. Each criterion prints exactly one line:
//   criterion <n>: PASS|FAIL|NOT GATED - <evidence>
//
// Usage:
//   wmlstm_acceptance check <n> <workdir>   verdict for one criterion
//   wmlstm_acceptance run <n> <rundir>      training for criteria 5-9 only
//   wmlstm_acceptance all <workdir>         run_a, run_b, then all verdicts
//
// Criteria 5-9 read their results from <workdir>/run_a; criterion 10 (and
// the determinism clause of 7) compare run_a against run_b.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wmlstm/cells.h"
#include "wmlstm/diagnostics.h"
#include "wmlstm/errors.h"
#include "wmlstm/numerics.h"
#include "wmlstm/tasks.h"
#include "wmlstm/trainer.h"

namespace wmlstm {
namespace {

namespace fs = std::filesystem;

struct Verdict {
  enum Kind { kPass, kFail, kNotGated } kind;
  std::string evidence;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path data_dir() { return WMLSTM_ACCEPTANCE_DATA_DIR; }

const std::vector<CellVariant>& all_shapes() {
  static const std::vector<CellVariant> v = {
      CellVariant::vanilla(), CellVariant::peephole(ConnShape::kDiagonal),
      CellVariant::peephole(ConnShape::kFull),
      CellVariant::working_memory(ConnShape::kDiagonal),
      CellVariant::working_memory(ConnShape::kFull)};
  return v;
}

// ---------------------------------------------------------------------------
// Run configurations for criteria 5-9

ExperimentConfig adding_config(const fs::path& out) {
  ExperimentConfig c = default_config(TaskId::kAdding);
  c.variant = CellVariant::working_memory();
  c.T = 100;
  c.hidden = 32;
  c.batch = 128;
  c.optimizer = OptimizerKind::kSgd;
  c.lr = 1e-2;
  c.momentum = 0.9;
  c.clip_norm = 1.0;
  c.epochs = 30;
  c.batches_per_epoch = 100;
  c.seeds = {1};
  c.out_dir = out / "c5";
  return c;
}

ExperimentConfig copy_config(const fs::path& out) {
  ExperimentConfig c = default_config(TaskId::kCopy);
  c.variant = CellVariant::working_memory();
  c.T = 50;
  c.hidden = 64;
  c.batch = 128;
  c.optimizer = OptimizerKind::kAdam;
  c.lr = 5e-3;
  c.epochs = 100;
  c.batches_per_epoch = 100;
  c.seeds = {1};
  c.out_dir = out / "c6";
  return c;
}

ExperimentConfig smnist_config(const fs::path& out, CellVariant v) {
  ExperimentConfig c = default_config(TaskId::kSMnist);
  c.variant = v;
  c.data_dir = data_dir();
  c.train_count = 10000;
  c.valid_count = 0;
  c.test_count = -1;
  c.hidden = 64;
  c.batch = 16;
  c.optimizer = OptimizerKind::kAdam;
  c.lr = 1e-3;
  c.forget_bias = 1.0;
  c.epochs = 10;
  c.eval_every = 5;
  c.seeds = {1, 2, 3};
  c.out_dir = out / "c7";
  return c;
}

constexpr int kCellNormUpdates = 20;
constexpr int kCellNormProbe = 16;

ExperimentConfig charlm_config(const fs::path& out) {
  ExperimentConfig c = default_config(TaskId::kCharLm);
  c.variant = CellVariant::working_memory();
  c.data_dir = data_dir();
  c.hidden = 128;
  c.batch = 32;
  c.tbptt = 150;
  c.optimizer = OptimizerKind::kAdam;
  c.lr = 2e-3;
  c.epochs = 5;
  c.seeds = {1};
  c.out_dir = out / "c9";
  return c;
}

const std::vector<CellVariant> kMnistVariants = {CellVariant::vanilla(),
                                                 CellVariant::peephole(),
                                                 CellVariant::working_memory()};

void run_criterion(int n, const fs::path& dir) {
  // Start clean so results from older configurations cannot linger.
  fs::remove_all(dir / ("c" + std::to_string(n)));
  switch (n) {
    case 5: train_experiment(adding_config(dir)); return;
    case 6: train_experiment(copy_config(dir)); return;
    case 7:
      for (const auto& v : kMnistVariants) train_experiment(smnist_config(dir, v));
      return;
    case 8: {
      const auto traces = early_training_cell_norms(
          smnist_config(dir, CellVariant::working_memory()),
          {CellVariant::peephole(), CellVariant::working_memory()}, 1,
          kCellNormUpdates, kCellNormProbe);
      fs::create_directories(dir / "c8");
      std::ofstream out(dir / "c8" / "cell_norm.dat");
      write_cell_norm_dat(out, traces);
      return;
    }
    case 9: train_experiment(charlm_config(dir)); return;
    default:
      throw ConfigError("only criteria 5-9 have a training phase");
  }
}

std::vector<MetricRecord> load_records(const fs::path& run_dir) {
  std::ifstream in(run_dir / "metrics.csv");
  if (!in) throw DataError("missing " + (run_dir / "metrics.csv").string());
  return read_metrics_csv(in);
}

// Value of split/metric at `epoch`, or NaN.
double value_at(const std::vector<MetricRecord>& rs, std::string_view split,
                std::string_view metric, int epoch) {
  for (const auto& r : rs) {
    if (r.epoch == epoch && r.split == split && r.metric == metric) return r.value;
  }
  return std::nan("");
}

std::map<int, double> series(const std::vector<MetricRecord>& rs,
                             std::string_view split, std::string_view metric) {
  std::map<int, double> out;
  for (const auto& r : rs) {
    if (r.split == split && r.metric == metric) out[r.epoch] = r.value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Criteria

Verdict criterion1() {
  double worst = 0.0;
  std::string where;
  for (const auto& v : all_shapes()) {
    const GradCheckResult r = gradient_check(v, 5, 8, 10, 1, 1e-5);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = v.tag() + " " + r.worst;
    }
  }
  return {worst < 1e-6 ? Verdict::kPass : Verdict::kFail,
          "max relative error " + fmt("%.3e", worst) + " (" + where +
              ") over 5 variant/shape pairs, threshold 1e-6"};
}

Verdict criterion2() {
  Rng rng(2024);
  const std::vector<CellVariant> shapes(all_shapes().begin() + 1, all_shapes().end());
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const CellVariant v = shapes[rng.below(shapes.size())];
    const int H = 2 + static_cast<int>(rng.below(7));
    const int I = 1 + static_cast<int>(rng.below(5));
    CellParams p = init_params(v, I, H, rng);
    p.wc *= rng.uniform(0.5, 5.0);
    CellState s = CellState::zeros(H, 1);
    const double scale = std::pow(10.0, rng.uniform(-1.0, 2.0));
    for (double& x : s.h.reshaped()) x = rng.uniform(-1.0, 1.0);
    for (double& x : s.c.reshaped()) x = rng.uniform(-scale, scale);
    Batch x(I, 1);
    for (double& e : x.reshaped()) e = rng.uniform(-1.0, 1.0);
    const StepOutput out = step_forward(p, x, s);
    const CellGateGrads cf = closed_form_cell_gate_grad(p, out.cache);
    const bool full = v.shape() == ConnShape::kFull;
    auto scaled = [&](const Matrix& m, const Vector& d) -> Matrix {
      return full ? Matrix(d.asDiagonal() * m) : Matrix(m.cwiseProduct(d));
    };
    auto rel = [](const Matrix& a, const Matrix& b) {
      const double den = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-300});
      return (a - b).cwiseAbs().maxCoeff() / den;
    };
    // Reverse mode through the step with chosen upstream gradients: a unit
    // c-upstream isolates the i and f gates, an h-upstream with zero
    // c-upstream isolates the o gate.
    CellGrads g(v, I, H);
    g.set_zero();
    step_backward(p, out.cache, Batch::Zero(H, 1), Batch::Ones(H, 1), g);
    worst = std::max(worst, rel(g.cell_weights(Gate::kI),
                                scaled(cf.i, out.cache.gate(Gate::kG).col(0))));
    worst = std::max(worst, rel(g.cell_weights(Gate::kF), scaled(cf.f, s.c.col(0))));
    g.set_zero();
    Batch dh(H, 1);
    for (double& e : dh.reshaped()) e = rng.uniform(-1.0, 1.0);
    step_backward(p, out.cache, dh, Batch::Zero(H, 1), g);
    const Vector d_o = dh.cwiseProduct(out.cache.tanh_c_new).col(0);
    worst = std::max(worst, rel(g.cell_weights(Gate::kO), scaled(cf.o, d_o)));
  }
  return {worst < 1e-12 ? Verdict::kPass : Verdict::kFail,
          "max relative deviation " + fmt("%.3e", worst) +
              " over 100 random instances (i, f, o gates), threshold 1e-12"};
}

Verdict criterion3() {
  Rng rng(3);
  const int I = 4, H = 8, B = 3, steps = 1000;
  const CellParams van = init_params(CellVariant::vanilla(), I, H, rng);
  std::vector<CellParams> others;
  for (const auto& v : all_shapes()) {
    if (!v.has_cell_connections()) continue;
    CellParams p(v, I, H);
    p.wx = van.wx;
    p.wh = van.wh;
    p.b = van.b;
    p.wc.setZero();
    others.push_back(p);
  }
  CellState sv = CellState::zeros(H, B);
  std::vector<CellState> so(others.size(), sv);
  int mismatches = 0;
  for (int t = 0; t < steps; ++t) {
    Batch x(I, B);
    for (double& e : x.reshaped()) e = rng.uniform(-2.0, 2.0);
    sv = step_forward(van, x, sv, t).state;
    for (std::size_t k = 0; k < others.size(); ++k) {
      so[k] = step_forward(others[k], x, so[k], t).state;
      const bool same =
          std::memcmp(so[k].h.data(), sv.h.data(), sizeof(double) * H * B) == 0 &&
          std::memcmp(so[k].c.data(), sv.c.data(), sizeof(double) * H * B) == 0;
      mismatches += !same;
    }
  }
  return {mismatches == 0 ? Verdict::kPass : Verdict::kFail,
          std::to_string(mismatches) + " non-identical (h, c) pairs over " +
              std::to_string(steps) + " steps x 4 variant/shape pairs"};
}

Verdict criterion4() {
  const std::vector<double> norms = {1, 10, 100, 1000};
  const GrowthTable t = gradient_growth_experiment(16, norms);
  double worst_ratio_dev = 0.0;
  for (std::size_t k = 1; k < t.rows.size(); ++k) {
    const double ratio = t.rows[k].peephole_fixed / t.rows[k - 1].peephole_fixed;
    const double expected = t.rows[k].c_norm / t.rows[k - 1].c_norm;
    worst_ratio_dev = std::max(worst_ratio_dev, std::abs(ratio / expected - 1.0));
  }
  bool bounded = true, non_increasing = true;
  int saturated = 0;
  double prev = INFINITY;
  std::string wmc;
  for (const auto& r : t.rows) {
    bounded &= r.wmc <= t.wmc_bound;
    if (r.saturated_fraction == 1.0) {
      non_increasing &= r.wmc <= prev;
      prev = r.wmc;
      ++saturated;
    }
    wmc += (wmc.empty() ? "" : ",") + fmt("%.3g", r.wmc);
  }
  const bool ok = worst_ratio_dev < 0.05 && bounded && non_increasing && saturated >= 2;
  return {ok ? Verdict::kPass : Verdict::kFail,
          "peephole linear within " + fmt("%.2f%%", 100 * worst_ratio_dev) +
              "; wmc norms " + wmc + " <= bound " + fmt("%.3g", t.wmc_bound) +
              (bounded ? "" : " VIOLATED") + "; " + std::to_string(saturated) +
              " saturated rows " + (non_increasing ? "non-increasing" : "INCREASING")};
}

Verdict criterion5(const fs::path& a) {
  const ExperimentConfig c = adding_config(a);
  const auto mse = series(load_records(c.run_dir(1)), "test", "mse");
  int first = -1;
  double best = INFINITY;
  for (const auto& [e, v] : mse) {
    if (e >= 1 && e <= 30) {
      best = std::min(best, v);
      if (first < 0 && v < 0.05) first = e;
    }
  }
  const double last = mse.empty() ? NAN : mse.rbegin()->second;
  return {first > 0 ? Verdict::kPass : Verdict::kFail,
          "WMC adding T=100 best test MSE " + fmt("%.4f", best) + ", epoch-30 " +
              fmt("%.4f", last) +
              (first > 0 ? " (below 0.05 at epoch " + std::to_string(first) + ")"
                         : " (never below 0.05)") +
              "; trivial plateau " + fmt("%.4f", kAddingTrivialMse)};
}

Verdict criterion6(const fs::path& a) {
  const ExperimentConfig c = copy_config(a);
  const auto rs = load_records(c.run_dir(1));
  const double bound = copy_memoryless_baseline_nats(c.T);
  const auto acc = series(rs, "test", "accuracy");
  int hit = -1;
  double best = 0.0;
  for (const auto& [e, v] : acc) {
    if (e < 1 || e > 100) continue;
    best = std::max(best, v);
    const double loss = value_at(rs, "test", "loss", e);
    if (hit < 0 && v > 0.5 && v > 0.125 && loss < bound) hit = e;
  }
  const int e = hit > 0 ? hit : (acc.empty() ? 0 : acc.rbegin()->first);
  return {hit > 0 ? Verdict::kPass : Verdict::kFail,
          "WMC copy T=50 payload accuracy " +
              fmt("%.4f", value_at(rs, "test", "accuracy", e)) + " and CE " +
              fmt("%.4f", value_at(rs, "test", "loss", e)) + " nats at epoch " +
              std::to_string(e) + " (best accuracy " + fmt("%.4f", best) +
              "; needs > 0.5 and CE < " + fmt("%.4f", bound) + ")"};
}

bool same_csv_without_seconds(const fs::path& x, const fs::path& y) {
  std::ifstream a(x), b(y);
  if (!a || !b) return false;
  auto strip = [](const std::string& line) {
    const auto comma = line.rfind(',');
    return comma == std::string::npos ? line : line.substr(0, comma);
  };
  std::string la, lb;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(a, la));
    const bool gb = static_cast<bool>(std::getline(b, lb));
    if (ga != gb) return false;
    if (!ga) return true;
    if (strip(la) != strip(lb)) return false;
  }
}

bool same_bytes(const fs::path& x, const fs::path& y) {
  std::ifstream a(x, std::ios::binary), b(y, std::ios::binary);
  if (!a || !b) return false;
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  return sa.str() == sb.str();
}

Verdict criterion7(const fs::path& work) {
  const fs::path a = work / "run_a", b = work / "run_b";
  std::map<std::string, std::vector<double>> final_acc;
  double lowest = INFINITY;
  bool deterministic = true;
  for (const auto& v : kMnistVariants) {
    const ExperimentConfig ca = smnist_config(a, v), cb = smnist_config(b, v);
    for (std::uint64_t s : ca.seeds) {
      const double acc = value_at(load_records(ca.run_dir(s)), "test", "accuracy", 10);
      final_acc[v.name()].push_back(acc);
      lowest = std::min(lowest, std::isnan(acc) ? -1.0 : acc);
      deterministic &= same_csv_without_seconds(ca.run_dir(s) / "metrics.csv",
                                                cb.run_dir(s) / "metrics.csv");
    }
  }
  int wmc_ahead = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    wmc_ahead += final_acc["wmc"][k] >= final_acc["vanilla"][k];
  }
  std::string table;
  for (const auto& v : kMnistVariants) {
    table += " " + v.name() + "=";
    for (double x : final_acc[v.name()]) table += fmt("%.4f/", x);
    table.pop_back();
  }
  const bool ok = lowest > 0.70 && wmc_ahead >= 2 && deterministic;
  return {ok ? Verdict::kPass : Verdict::kFail,
          "epoch-10 test accuracy (seeds 1/2/3):" + table + "; min " +
              fmt("%.4f", lowest) + " (needs > 0.70); WMC >= vanilla on " +
              std::to_string(wmc_ahead) + "/3 seeds; rerun " +
              (deterministic ? "identical" : "DIFFERS")};
}

Verdict criterion8(const fs::path& a) {
  std::ifstream in(a / "c8" / "cell_norm.dat");
  if (!in) throw DataError("missing cell-norm trace");
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') last = line;
  }
  std::istringstream row(last);
  int step = 0;
  double peep = 0.0, wmc = 0.0;
  row >> step >> peep >> wmc;
  return {step == 784 && peep > wmc ? Verdict::kPass : Verdict::kFail,
          "||c_t|| at t=" + std::to_string(step) + " after " +
              std::to_string(kCellNormUpdates) + " sMNIST updates: peephole " +
              fmt("%.4g", peep) + " vs wmc " + fmt("%.4g", wmc)};
}

Verdict criterion9(const fs::path& a) {
  const ExperimentConfig c = charlm_config(a);
  const auto rs = load_records(c.run_dir(1));
  const double bpc = value_at(rs, "test", "bpc", c.epochs);
  const std::string text = read_file_bytes(c.data_dir / "sotu" / c.corpus_file);
  const CharCorpus corpus = encode_corpus(text, c.corpus_split);
  std::vector<int> all;
  all.reserve(text.size());
  for (const auto* part : {&corpus.train, &corpus.valid, &corpus.test}) {
    all.insert(all.end(), part->begin(), part->end());
  }
  const double entropy = unigram_entropy_bits(all, corpus.vocab_size());

  const Model m = load_model(c.run_dir(1) / "weights.bin");
  const BatchStats windows = evaluate_stream(m, corpus.test, c.batch, c.tbptt);
  const BatchStats full = evaluate_stream(m, corpus.test, c.batch, 1 << 30);
  const double rel = std::abs(windows.loss_sum - full.loss_sum) / full.loss_sum;
  const bool ok = bpc < entropy && rel <= 1e-10;
  return {ok ? Verdict::kPass : Verdict::kFail,
          "WMC test BPC " + fmt("%.4f", bpc) + " after 5 epochs vs unigram entropy " +
              fmt("%.4f", entropy) + " bits (" + std::to_string(text.size()) +
              " bytes); truncated vs full loss rel. diff " + fmt("%.2e", rel)};
}

std::vector<fs::path> result_files(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (name == "metrics.csv" || name == "cell_norm.dat") {
      out.push_back(fs::relative(e.path(), root));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Verdict criterion10(const fs::path& work) {
  const fs::path a = work / "run_a", b = work / "run_b";
  const auto files_a = result_files(a), files_b = result_files(b);
  int differ = 0;
  for (const auto& f : files_a) {
    const bool same = f.extension() == ".csv"
                          ? same_csv_without_seconds(a / f, b / f)
                          : same_bytes(a / f, b / f);
    differ += !same;
  }
  const bool ok = !files_a.empty() && files_a == files_b && differ == 0;
  return {ok ? Verdict::kPass : Verdict::kFail,
          std::to_string(files_a.size()) + " result files from criteria 5-9, " +
              std::to_string(differ) + " differ between two runs" +
              (files_a == files_b ? "" : " (file sets differ)")};
}

Verdict criterion11() {
  int configs = 0;
  const fs::path dir = fs::path(WMLSTM_ACCEPTANCE_SOURCE_DIR) / "configs";
  if (fs::exists(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) configs += e.path().extension() == ".cfg";
  }
  return {Verdict::kNotGated,
          std::to_string(configs) +
              " long-run configs in configs/ (see README for expected outcomes)"};
}

Verdict check(int n, const fs::path& work) {
  const fs::path a = work / "run_a";
  switch (n) {
    case 1: return criterion1();
    case 2: return criterion2();
    case 3: return criterion3();
    case 4: return criterion4();
    case 5: return criterion5(a);
    case 6: return criterion6(a);
    case 7: return criterion7(work);
    case 8: return criterion8(a);
    case 9: return criterion9(a);
    case 10: return criterion10(work);
    case 11: return criterion11();
    default: throw ConfigError("criteria are numbered 1-11");
  }
}

int print_verdict(int n, const fs::path& work) {
  Verdict v{Verdict::kFail, ""};
  try {
    v = check(n, work);
  } catch (const std::exception& e) {
    v = {Verdict::kFail, std::string("error: ") + e.what()};
  }
  static const char* kLabel[] = {"PASS", "FAIL", "NOT GATED"};
  std::printf("criterion %d: %s - %s\n", n, kLabel[v.kind], v.evidence.c_str());
  std::fflush(stdout);
  return v.kind == Verdict::kFail ? 1 : 0;
}

int usage() {
  std::fprintf(stderr,
               "usage: wmlstm_acceptance check <1-11> <workdir>\n"
               "       wmlstm_acceptance run <5-9> <rundir>\n"
               "       wmlstm_acceptance all <workdir>\n");
  return 2;
}

int main_impl(int argc, char** argv) {
  tune_allocator();
  if (argc < 3) return usage();
  const std::string mode = argv[1];
  if (mode == "all" && argc == 3) {
    const fs::path work = argv[2];
    for (const char* run : {"run_a", "run_b"}) {
      for (int n = 5; n <= 9; ++n) run_criterion(n, work / run);
    }
    int failed = 0;
    for (int n = 1; n <= 11; ++n) failed += print_verdict(n, work);
    return failed == 0 ? 0 : 1;
  }
  if (argc != 4) return usage();
  const int n = std::atoi(argv[2]);
  if (mode == "run") {
    run_criterion(n, argv[3]);
    return 0;
  }
  if (mode == "check") return print_verdict(n, argv[3]);
  return usage();
}

}  // namespace
}  // namespace wmlstm

int main(int argc, char** argv) {
  try {
    return wmlstm::main_impl(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance: %s\n", e.what());
    return 3;
  }
}
