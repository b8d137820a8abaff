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

#include "wmlstm/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "wmlstm/diagnostics.h"

#ifndef WMLSTM_DEFAULT_DATA_DIR
#define WMLSTM_DEFAULT_DATA_DIR "data"
#endif

namespace wmlstm {
namespace {

namespace fs = std::filesystem;

// Shortest text that reads back to the same double.
std::string fmt_g(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    if (k) s += ',';
    s += std::to_string(seeds[k]);
  }
  return s;
}

ExperimentConfig base_config(TaskId task) {
  ExperimentConfig cfg = default_config(task);
  cfg.data_dir = WMLSTM_DEFAULT_DATA_DIR;
  return cfg;
}

// A flag whose text is handed to apply_config_setting when given.
struct Setting {
  std::string key;
  std::string value;
  CLI::Option* opt = nullptr;
};

struct Flags {
  std::string config;
  CLI::Option* config_opt = nullptr;
  // Ordered: variant precedes conn-shape.
  std::vector<Setting> settings;
  bool trace = false;
  CLI::Option* trace_opt = nullptr;

  void bind(CLI::App* app, const std::vector<std::string>& help) {
    for (std::size_t k = 0; k < settings.size(); ++k) {
      settings[k].opt =
          app->add_option("--" + settings[k].key, settings[k].value, help[k]);
    }
  }
  void apply(ExperimentConfig& cfg) const {
    if (config_opt && config_opt->count() > 0) load_config_file(cfg, config);
    for (const auto& s : settings) {
      if (s.opt->count() > 0) apply_config_setting(cfg, s.key, s.value);
    }
    if (trace_opt && trace_opt->count() > 0) cfg.trace = true;
  }
};

struct TrainSpec {
  Subcommand sub;
  TaskId task;
  const char* help;
};

constexpr TrainSpec kTrainSpecs[] = {
    {Subcommand::kAdding, TaskId::kAdding, "Adding problem (regression)"},
    {Subcommand::kCopy, TaskId::kCopy, "Copy task (memorise 10 symbols)"},
    {Subcommand::kSMnist, TaskId::kSMnist, "Sequential MNIST, pixel by pixel"},
    {Subcommand::kPMnist, TaskId::kPMnist, "Permuted sequential MNIST"},
    {Subcommand::kCharLm, TaskId::kCharLm,
     "Character-level language model (bits per character)"},
};

void add_training_flags(CLI::App* app, Flags& f, const ExperimentConfig& d) {
  app->option_defaults()->always_capture_default();
  f.config_opt = app->add_option("--config", f.config,
                                 "key=value file applied before the flags");
  f.config_opt->check(CLI::ExistingFile);
  f.settings = {
      {"variant", d.variant.name(), nullptr},
      {"conn-shape", d.conn_shape.empty()
                         ? std::string("variant default (peephole diag, wmc full)")
                         : d.conn_shape,
       nullptr},
      {"T", std::to_string(d.T), nullptr},
      {"hidden", std::to_string(d.hidden), nullptr},
      {"batch", std::to_string(d.batch), nullptr},
      {"epochs", std::to_string(d.epochs), nullptr},
      {"lr", fmt_g(d.lr), nullptr},
      {"momentum", fmt_g(d.momentum), nullptr},
      {"clip-norm", fmt_g(d.clip_norm), nullptr},
      {"optimizer", optimizer_name(d.optimizer), nullptr},
      {"tbptt", std::to_string(d.tbptt), nullptr},
      {"seeds", join_seeds(d.seeds), nullptr},
      {"forget-bias", fmt_g(d.forget_bias), nullptr},
      {"data-dir", d.data_dir.string(), nullptr},
      {"out", d.out_dir.string(), nullptr},
  };
  f.bind(app, {"vanilla | peephole | wmc",
               "diag | full",
               "adding: sequence length; copy: delay",
               "hidden units",
               "minibatch size (char-LM: parallel streams)",
               "training epochs (0: evaluate the initial model only)",
               "learning rate",
               "Nesterov momentum (sgd)",
               "global gradient-norm clip (0 disables)",
               "sgd | adam",
               "truncated BPTT window (char-LM)",
               "comma-separated run seeds",
               "initial forget-gate bias",
               "directory holding mnist/ and sotu/",
               "output root"});
  f.trace_opt = app->add_flag("--trace", f.trace,
                              "write traces.csv (cell norms, gate saturation)");
}

std::string help_of(const CLI::App& app) { return app.help(); }

}  // namespace

Command parse_args(int argc, const char* const* argv) {
  CLI::App app{"Working-memory-connection LSTM experiments", "wmlstm"};
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();

  std::map<CLI::App*, std::pair<TrainSpec, Flags>> train;
  for (const TrainSpec& spec : kTrainSpecs) {
    CLI::App* sub = app.add_subcommand(task_name(spec.task), spec.help);
    auto& [s, flags] = train[sub];
    s = spec;
    add_training_flags(sub, flags, base_config(spec.task));
  }

  // gradcheck
  Command gc;
  gc.cfg.hidden = 8;
  gc.cfg.T = 5;
  std::string gc_variant = "wmc", gc_shape;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Compare BPTT gradients with central finite differences");
  gradcheck->option_defaults()->always_capture_default();
  gradcheck->add_option("--variant", gc_variant, "vanilla | peephole | wmc");
  CLI::Option* gc_shape_opt = gradcheck->add_option(
      "--conn-shape", gc_shape, "diag | full (default: variant default)");
  gradcheck->add_option("--hidden", gc.cfg.hidden, "hidden units");
  gradcheck->add_option("--T", gc.cfg.T, "sequence length");
  gradcheck->add_option("--input", gc.input_dim, "input size");
  gradcheck->add_option("--seed", gc.seed, "parameter and input seed");
  gradcheck->add_option("--eps", gc.eps, "finite-difference step");
  gradcheck->add_option("--tol", gc.tolerance,
                        "pass threshold on the max relative error");

  // diag
  Command dg;
  dg.cfg = base_config(TaskId::kSMnist);
  dg.cfg.hidden = 32;
  dg.seed = 7;
  std::string dg_config, dg_data = dg.cfg.data_dir.string(),
                         dg_out = dg.cfg.out_dir.string();
  std::string dg_norms = "1,10,100,1000";
  CLI::App* diag = app.add_subcommand(
      "diag", "Gradient-growth sweep and early-training cell-norm traces");
  diag->option_defaults()->always_capture_default();
  CLI::Option* dg_config_opt = diag->add_option(
      "--config", dg_config, "key=value file for the cell-norm run (smnist)");
  dg_config_opt->check(CLI::ExistingFile);
  diag->add_option("--hidden", dg.cfg.hidden, "hidden units");
  diag->add_option("--norms", dg_norms, "comma-separated ||c|| values");
  diag->add_option("--seed", dg.seed, "weight seed");
  diag->add_flag("--cell-norms", dg.cell_norms,
                 "also trace ||c_t|| after early sMNIST training");
  diag->add_option("--updates", dg.updates, "training updates before tracing");
  diag->add_option("--probe", dg.probe, "probe batch size");
  diag->add_option("--data-dir", dg_data, "directory holding mnist/");
  diag->add_option("--out", dg_out, "output root");

  // aggregate
  Command ag;
  std::vector<std::string> ag_inputs;
  std::string ag_output;
  CLI::App* aggregate = app.add_subcommand(
      "aggregate", "Mean and standard error across seeds");
  aggregate->option_defaults()->always_capture_default();
  aggregate
      ->add_option("inputs", ag_inputs,
                   "metrics.csv files or directories searched for them")
      ->required();
  aggregate->add_option("--output", ag_output,
                        "output CSV (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    Command cmd;
    const auto subs = app.get_subcommands();
    cmd.help = subs.empty() ? help_of(app) : help_of(*subs.front());
    return cmd;
  } catch (const CLI::CallForAllHelp&) {
    Command cmd;
    cmd.help = app.help("", CLI::AppFormatMode::All);
    return cmd;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    throw UsageError(e.what(), subs.empty() ? help_of(app)
                                            : help_of(*subs.front()));
  }

  CLI::App* chosen = app.get_subcommands().front();
  auto usage_wrap = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw UsageError(e.what(), help_of(*chosen));
    }
  };

  if (auto it = train.find(chosen); it != train.end()) {
    Command cmd;
    cmd.sub = it->second.first.sub;
    cmd.cfg = base_config(it->second.first.task);
    usage_wrap([&] {
      it->second.second.apply(cmd.cfg);
      if (cmd.cfg.task != it->second.first.task) {
        throw ConfigError("config sets task '" + task_name(cmd.cfg.task) +
                          "' but the subcommand is '" +
                          task_name(it->second.first.task) + "'");
      }
      cmd.cfg.validate();
    });
    return cmd;
  }
  if (chosen == gradcheck) {
    gc.sub = Subcommand::kGradcheck;
    usage_wrap([&] {
      gc.cfg.variant = parse_variant(
          gc_variant, gc_shape_opt->count() > 0
                          ? std::optional<std::string_view>(gc_shape)
                          : std::nullopt);
      if (gc.cfg.hidden < 1 || gc.cfg.T < 1 || gc.input_dim < 1 ||
          !(gc.eps > 0.0) || !(gc.tolerance > 0.0)) {
        throw ConfigError("gradcheck: sizes, eps and tol must be positive");
      }
    });
    return gc;
  }
  if (chosen == diag) {
    dg.sub = Subcommand::kDiag;
    usage_wrap([&] {
      if (dg_config_opt->count() > 0) load_config_file(dg.cfg, dg_config);
      dg.cfg.data_dir = dg_data;
      dg.cfg.out_dir = dg_out;
      dg.norms.clear();
      std::stringstream ss(dg_norms);
      for (std::string item; std::getline(ss, item, ',');) {
        try {
          std::size_t used = 0;
          const double v = std::stod(item, &used);
          if (used != item.size() || !(v >= 0.0)) throw std::invalid_argument("");
          dg.norms.push_back(v);
        } catch (const std::exception&) {
          throw ConfigError("invalid --norms entry '" + item + "'");
        }
      }
      if (dg.norms.empty() || dg.cfg.hidden < 1 || dg.updates < 0 ||
          dg.probe < 1) {
        throw ConfigError("diag: invalid sizes");
      }
    });
    return dg;
  }
  ag.sub = Subcommand::kAggregate;
  for (const auto& s : ag_inputs) ag.inputs.emplace_back(s);
  ag.output = ag_output;
  return ag;
}

namespace {

void write_aggregate_files(const fs::path& dir,
                           const std::vector<AggregateRow>& rows) {
  {
    std::ofstream out(dir / "aggregate.csv");
    write_aggregate_csv(out, rows);
  }
  std::map<std::pair<std::string, std::string>, std::vector<AggregateRow>> by;
  for (const auto& r : rows) by[{r.split, r.metric}].push_back(r);
  for (const auto& [key, rs] : by) {
    std::ofstream out(dir / ("aggregate_" + key.first + "_" + key.second +
                             ".dat"));
    out << "# epoch mean sem n\n";
    for (const auto& r : rs) {
      out << r.epoch << ' ' << fmt_g(r.mean) << ' ' << fmt_g(r.sem) << ' '
          << r.n << '\n';
    }
  }
}

int run_training(const Command& cmd, std::ostream& out) {
  const ExperimentConfig& cfg = cmd.cfg;
  const auto records = train_experiment(cfg);
  const auto rows = aggregate_runs(records);
  const fs::path dir = cfg.out_dir / task_name(cfg.task) / cfg.variant.tag();
  write_aggregate_files(dir, rows);
  int last = 0;
  for (const auto& r : rows) last = std::max(last, r.epoch);
  out << task_name(cfg.task) << " " << cfg.variant.tag() << " epoch " << last
      << " (" << cfg.seeds.size() << " seeds)\n";
  for (const auto& r : rows) {
    if (r.epoch != last) continue;
    char line[160];
    std::snprintf(line, sizeof line, "  %-6s %-14s %.6f +- %.6f\n",
                  r.split.c_str(), r.metric.c_str(), r.mean, r.sem);
    out << line;
  }
  out << "results in " << dir.string() << "\n";
  return kExitOk;
}

int run_gradcheck(const Command& cmd, std::ostream& out) {
  const GradCheckResult r =
      gradient_check(cmd.cfg.variant, cmd.input_dim, cmd.cfg.hidden,
                     cmd.cfg.T, cmd.seed, cmd.eps);
  const bool ok = r.max_rel_error < cmd.tolerance;
  char line[256];
  std::snprintf(line, sizeof line,
                "%s hidden=%d input=%d T=%d: max relative error %.3e "
                "(max abs %.3e at %s, %zu parameters) %s\n",
                cmd.cfg.variant.tag().c_str(), cmd.cfg.hidden, cmd.input_dim,
                cmd.cfg.T, r.max_rel_error, r.max_abs_error, r.worst.c_str(),
                r.checked, ok ? "PASS" : "FAIL");
  out << line;
  return ok ? kExitOk : kExitCheckFailed;
}

int run_diag(const Command& cmd, std::ostream& out) {
  const fs::path dir = cmd.cfg.out_dir / "diag";
  fs::create_directories(dir);
  const GrowthTable table =
      gradient_growth_experiment(cmd.cfg.hidden, cmd.norms, cmd.seed);
  {
    std::ofstream csv(dir / "growth.csv");
    write_growth_csv(csv, table);
    std::ofstream dat(dir / "growth.dat");
    dat << "# c_norm peephole_fixed peephole_raw wmc\n";
    for (const auto& r : table.rows) {
      dat << fmt_g(r.c_norm) << ' ' << fmt_g(r.peephole_fixed) << ' '
          << fmt_g(r.peephole_raw) << ' ' << fmt_g(r.wmc) << '\n';
    }
  }
  out << "||c||        peephole(fixed)  peephole(raw)    wmc              "
         "saturated\n";
  for (const auto& r : table.rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-12g %-16.6g %-16.6g %-16.6g %.3f\n",
                  r.c_norm, r.peephole_fixed, r.peephole_raw, r.wmc,
                  r.saturated_fraction);
    out << line;
  }
  out << "wmc bound " << fmt_g(table.wmc_bound) << "\n";

  if (cmd.cell_norms) {
    const auto traces = early_training_cell_norms(
        cmd.cfg,
        {CellVariant::vanilla(), CellVariant::peephole(),
         CellVariant::working_memory()},
        cmd.seed, cmd.updates, cmd.probe);
    std::ofstream csv(dir / "cell_norm.csv");
    csv << "step,quantity,value\n";
    for (const auto& t : traces) {
      for (std::size_t s = 0; s < t.cell_norm.size(); ++s) {
        csv << s + 1 << ",cell_norm_" << t.variant.tag() << ','
            << fmt_g(t.cell_norm[s]) << '\n';
      }
    }
    std::ofstream dat(dir / "cell_norm.dat");
    write_cell_norm_dat(dat, traces);
    for (const auto& t : traces) {
      out << "final ||c_t|| " << t.variant.tag() << " "
          << fmt_g(t.cell_norm.back()) << "\n";
    }
  }
  out << "results in " << dir.string() << "\n";
  return kExitOk;
}

int run_aggregate(const Command& cmd, std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& in : cmd.inputs) {
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().filename() == "metrics.csv") {
          files.push_back(e.path());
        }
      }
    } else if (fs::is_regular_file(in)) {
      files.push_back(in);
    } else {
      throw DataError("no such file or directory: " + in.string());
    }
  }
  if (files.empty()) throw DataError("no metrics.csv found");
  std::sort(files.begin(), files.end());
  std::vector<MetricRecord> all;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw DataError("cannot read " + f.string());
    auto rs = read_metrics_csv(in);
    all.insert(all.end(), rs.begin(), rs.end());
  }
  const auto rows = aggregate_runs(all);
  if (cmd.output.empty()) {
    write_aggregate_csv(out, rows);
  } else {
    std::ofstream o(cmd.output);
    if (!o) throw DataError("cannot write " + cmd.output.string());
    write_aggregate_csv(o, rows);
  }
  return kExitOk;
}

}  // namespace

int run(const Command& cmd, std::ostream& out, std::ostream& err) {
  if (!cmd.help.empty()) {
    out << cmd.help;
    return kExitOk;
  }
  try {
    switch (cmd.sub) {
      case Subcommand::kGradcheck: return run_gradcheck(cmd, out);
      case Subcommand::kDiag: return run_diag(cmd, out);
      case Subcommand::kAggregate: return run_aggregate(cmd, out);
      default: return run_training(cmd, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const NumericOverflow& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumericError;
  } catch (const ContractViolation& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternalError;
  }
}

int cli_main(int argc, const char* const* argv, std::ostream& out,
             std::ostream& err) {
  Command cmd;
  try {
    cmd = parse_args(argc, argv);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << e.usage();
    return kExitConfigError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return run(cmd, out, err);
}

}  // namespace wmlstm
