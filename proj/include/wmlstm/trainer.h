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

// Training and evaluation for the adding, copy, sequential/permuted MNIST and
// character-level language-modelling tasks.
//
// A run is a pure function of its ExperimentConfig (and data files): every
// random choice flows from Rng streams derived from the seed. The only
// nondeterministic output is the wall-clock column of the metric stream.

#ifndef WMLSTM_TRAINER_H_
#define WMLSTM_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wmlstm/cells.h"
#include "wmlstm/optim.h"
#include "wmlstm/tasks.h"

namespace wmlstm {

enum class TaskId { kAdding, kCopy, kSMnist, kPMnist, kCharLm };
enum class OptimizerKind { kSgd, kAdam };

std::string task_name(TaskId task);
TaskId parse_task(std::string_view name);  // throws ConfigError
std::string optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct ExperimentConfig {
  TaskId task = TaskId::kAdding;
  CellVariant variant = CellVariant::working_memory();
  // Explicit connection shape ("diag" / "full"); empty means the variant's
  // default. Kept separately so variant and shape can be given in any order.
  std::string conn_shape;
  int T = 200;  // adding: sequence length; copy: delay
  int hidden = 128;
  int batch = 128;
  int epochs = 200;
  double lr = 1e-2;
  double momentum = 0.9;
  double clip_norm = 1.0;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  int tbptt = 150;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double forget_bias = 1.0;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "runs";
  bool trace = false;

  // Settable through the config file only.
  int batches_per_epoch = 100;  // synthetic tasks: generated batches per epoch
  int eval_batches = 10;        // synthetic tasks: fixed test-set batches
  std::uint64_t eval_seed = 2021;
  int train_count = 50000;      // MNIST
  int valid_count = 10000;
  int test_count = -1;          // -1: whole test file
  std::uint64_t perm_seed = 0;  // pMNIST pixel order
  int eval_batch = 500;         // batch size for MNIST / char-LM evaluation
  int eval_every = 1;           // evaluate at multiples of this, and last
  std::string corpus_file = "corpus.txt";
  SplitFractions corpus_split;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Throws ConfigError on invalid values.
  void validate() const;
  // <out>/<task>/<variant tag>/seed<k>
  std::filesystem::path run_dir(std::uint64_t seed) const;
};

// Applies one `key=value` setting; keys use the long flag names with either
// '-' or '_' (e.g. clip-norm, clip_norm). Throws ConfigError.
void apply_config_setting(ExperimentConfig& cfg, std::string_view key,
                          std::string_view value);
// Reads a key=value file ('#' starts a comment). Throws ConfigError.
void load_config_file(ExperimentConfig& cfg, const std::filesystem::path& path);
// Default T / epochs for a task, matching the long-run protocol.
ExperimentConfig default_config(TaskId task);

// ---------------------------------------------------------------------------
// Model

// Affine readout from h to `classes` outputs (1 for the adding regression).
struct ReadoutParams {
  ReadoutParams(int classes, int hidden);

  Matrix w;  // classes x hidden
  Vector b;

  int classes() const { return static_cast<int>(w.rows()); }
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  void set_zero();
};

ReadoutParams init_readout(int classes, int hidden, Rng& rng);

struct Model {
  CellParams cell;
  ReadoutParams readout;

  TensorSpans tensors();
  ConstTensorSpans tensors() const;
};

struct ModelGrads {
  CellGrads cell;
  ReadoutParams readout;

  explicit ModelGrads(const Model& like);
  TensorSpans tensors();
  void set_zero();
};

// Cell block in the WMC1 layout, then u32 classes, u32 hidden, W_out, b_out.
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);
std::uint32_t model_checksum(const Model& model);

// ---------------------------------------------------------------------------
// Losses

struct LossAndGrad {
  double loss;
  Vector grad;
};

// mean((pred - target)^2) and its gradient 2 (pred - target) / n.
LossAndGrad mse_loss(const Vector& pred, const Vector& target);
// -log softmax(logits)[target] (nats) and softmax - one_hot.
LossAndGrad softmax_cross_entropy(const Vector& logits, int target_id);

// ---------------------------------------------------------------------------
// Batched sequence problems

enum class ReadoutMode {
  kLastRegression,  // adding
  kLastClass,       // MNIST
  kEveryStepClass,  // copy, char-LM
};

struct SequenceBatch {
  ReadoutMode mode = ReadoutMode::kLastClass;
  std::vector<Batch> inputs;
  Vector regression_targets;                   // kLastRegression: B
  std::vector<int> class_targets;              // kLastClass: B
  std::vector<std::vector<int>> step_targets;  // kEveryStepClass: [t][b]
  // kEveryStepClass: accuracy is also reported from this step on.
  int accuracy_from_step = 0;

  int batch() const { return static_cast<int>(inputs.front().cols()); }
};

SequenceBatch adding_problem(const AddingBatch& b);
SequenceBatch copy_problem(const CopyBatch& b);

struct BatchStats {
  double loss_sum = 0.0;  // squared errors or nats, summed over scored items
  double scored = 0.0;
  double correct = 0.0;  // classification: over accuracy_from_step..end
  double counted = 0.0;
  double correct_all = 0.0;  // every-step classification: all positions
  double counted_all = 0.0;

  double mean_loss() const { return scored > 0 ? loss_sum / scored : 0.0; }
  void add(const BatchStats& o);
};

// Runs the batch from `state` and leaves the final state in it. When `grads`
// is non-null, accumulates gradients of the mean loss (loss_sum / scored).
BatchStats run_batch(const Model& model, const SequenceBatch& batch,
                     CellState& state, ModelGrads* grads);

// Next-symbol statistics over `ids` split into `streams` contiguous streams,
// read in windows of `window` steps with the state carried across windows.
BatchStats evaluate_stream(const Model& model, const std::vector<int>& ids,
                           int streams, int window);

class Optimizer {
 public:
  explicit Optimizer(const ExperimentConfig& cfg);
  // Clips the global gradient norm (when clip_norm > 0) and updates the
  // model. Returns the pre-clip norm.
  double step(Model& model, ModelGrads& grads);

 private:
  double clip_norm_;
  std::variant<SgdState, AdamState> state_;
};

// ---------------------------------------------------------------------------
// Experiments

struct MetricRecord {
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string split;   // train | valid | test
  std::string metric;  // mse | accuracy | accuracy_full | bpc | loss
  double value = 0.0;
  double seconds = 0.0;
};

inline constexpr std::string_view kMetricsCsvHeader =
    "seed,epoch,split,metric,value,seconds";

void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& rs);
std::vector<MetricRecord> read_metrics_csv(std::istream& in);

class TaskData;

// Loads the task data once and runs seeds against it.
class Experiment {
 public:
  // Throws ConfigError / DataError.
  explicit Experiment(ExperimentConfig cfg);
  ~Experiment();
  Experiment(Experiment&&) noexcept;

  const ExperimentConfig& config() const { return cfg_; }
  int input_dim() const;
  int classes() const;

  Model init_model(std::uint64_t seed) const;
  // Metrics of `model` on "valid" or "test". Never modifies the model.
  std::vector<MetricRecord> evaluate(const Model& model, std::string_view split,
                                     std::uint64_t seed, int epoch) const;

  struct RunResult {
    std::vector<MetricRecord> records;
    Model model;
  };
  // Epoch 0 evaluates the initial model; epochs 1..N train, then evaluate
  // when the epoch is a multiple of eval_every or the last one.
  // NumericOverflow aborts the run with the epoch and batch in the message.
  RunResult run_seed(
      std::uint64_t seed,
      const std::function<void(const std::vector<MetricRecord>&)>& on_epoch =
          {}) const;

  // The model after the first `updates` optimizer steps of run_seed(seed).
  Model train_steps(std::uint64_t seed, int updates) const;

  // A fixed batch for diagnostics: the first evaluation batch of the task.
  SequenceBatch probe_batch(int size) const;

  // Underlying datasets, for tests and diagnostics.
  const TaskData& data() const { return *data_; }

 private:
  ExperimentConfig cfg_;
  std::unique_ptr<TaskData> data_;
};

// Runs every seed, writing <run_dir>/metrics.csv, weights.bin and, with
// trace enabled, traces.csv. Returns all records.
std::vector<MetricRecord> train_experiment(const ExperimentConfig& cfg);

// Convenience wrapper over Experiment::evaluate.
std::vector<MetricRecord> evaluate(std::string_view split, const Model& model,
                                   const ExperimentConfig& cfg);

struct AggregateRow {
  std::string split;
  std::string metric;
  int epoch = 0;
  double mean = 0.0;
  double sem = 0.0;  // sample stddev / sqrt(n); 0 for a single seed
  int n = 0;
};

// Groups by (split, metric, epoch); independent of record order.
std::vector<AggregateRow> aggregate_runs(const std::vector<MetricRecord>& rs);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);

}  // namespace wmlstm

#endif  // WMLSTM_TRAINER_H_
