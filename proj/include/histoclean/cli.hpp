// Copyright 2026 The histoclean Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "histoclean/synthetic.hpp"
#include "histoclean/trainer.hpp"

namespace histoclean::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct SynthArgs {
  data::SyntheticSpec spec;
  std::filesystem::path out;
};

struct SplitArgs {
  std::filesystem::path data;
  std::filesystem::path out;  // defaults to overwriting `data`
  double fraction = 0.8;
};

struct TrainArgs {
  train::TrainConfig config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path report;  // defaults to eval_report.json beside the checkpoint
  std::string extractor = "random_projection";
  int feature_dim = 128;
  std::int64_t max_per_split = 0;
};

struct CleanArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input;  // manifest file or directory of PNG tiles
  std::filesystem::path out;
};

struct MosaicArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  int n = 8;
  std::filesystem::path out;
};

struct Command {
  std::string name;
  std::uint64_t seed = 0;
  bool deterministic = false;
  int verbosity = 0;
  std::variant<SynthArgs, SplitArgs, TrainArgs, EvalArgs, CleanArgs, MosaicArgs> args;
};

/// Either a validated command or an exit code plus text to print (help or
/// usage error).
struct ParseResult {
  std::optional<Command> command;
  int exit_code = kExitOk;
  std::string message;
};

ParseResult parse_args(const std::vector<std::string>& argv);
int run(const Command& cmd, std::ostream& out, std::ostream& err);
/// parse_args + run with messages routed to the given streams.
int main_entry(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace histoclean::cli
