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

// Command-line front end: argument parsing and subcommand dispatch.

#ifndef WMLSTM_CLI_H_
#define WMLSTM_CLI_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "wmlstm/errors.h"
#include "wmlstm/trainer.h"

namespace wmlstm {

enum class Subcommand {
  kAdding,
  kCopy,
  kSMnist,
  kPMnist,
  kCharLm,
  kGradcheck,
  kDiag,
  kAggregate,
};

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfigError = 2,
  kExitDataError = 3,
  kExitNumericError = 4,
  kExitInternalError = 5,
};

struct Command {
  Subcommand sub = Subcommand::kAdding;
  ExperimentConfig cfg;

  // gradcheck
  int input_dim = 5;
  std::uint64_t seed = 1;
  double eps = 1e-5;
  double tolerance = 1e-6;

  // diag
  std::vector<double> norms = {1, 10, 100, 1000};
  bool cell_norms = false;  // also trace early-training ||c_t|| on sMNIST
  int updates = 20;
  int probe = 16;

  // aggregate
  std::vector<std::filesystem::path> inputs;
  std::filesystem::path output;

  // Non-empty when --help was given; run() prints it and exits 0.
  std::string help;
};

// Usage problems: unknown flag, bad value, missing argument. Carries the
// usage text of the offending (sub)command.
class UsageError : public ConfigError {
 public:
  UsageError(const std::string& what, std::string usage)
      : ConfigError(what), usage_(std::move(usage)) {}
  const std::string& usage() const { return usage_; }

 private:
  std::string usage_;
};

// --config is applied first, then the remaining flags. Throws UsageError or
// ConfigError.
Command parse_args(int argc, const char* const* argv);

// Returns an ExitCode; errors from the library are mapped, not rethrown.
int run(const Command& cmd, std::ostream& out, std::ostream& err);

// parse_args + run with usage printing.
int cli_main(int argc, const char* const* argv, std::ostream& out,
             std::ostream& err);

}  // namespace wmlstm

#endif  // WMLSTM_CLI_H_
