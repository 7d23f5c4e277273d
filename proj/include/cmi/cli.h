// Copyright 2026 The CMI Authors.
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

#ifndef CMI_CLI_H_
#define CMI_CLI_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cmi/data.h"
#include "cmi/inference.h"
#include "cmi/model.h"
#include "cmi/training.h"

namespace cmi {

enum ExitCode : int {
  kExitOk = 0,
  kExitPartial = 1,
  kExitUsage = 2,
  kExitNumeric = 3,
};

struct RunConfig {
  Hyperparams hyper;
  std::filesystem::path interactions;
  std::filesystem::path checkpoint;  // empty: <output_dir>/model.cmi
  std::filesystem::path output_dir = ".";
  char delimiter = ',';
  int span_days = 14;
  Timestamp day_length = 86400;
  RankMode rank_mode = RankMode::kCombined;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::size_t max_epochs = 100;
  std::size_t instances_per_user = 0;

  std::filesystem::path CheckpointPath() const;
  std::filesystem::path EpochLogPath() const;

  // Throws ConfigError. Input paths are only checked when requested.
  void Validate(bool require_interactions) const;

  bool operator==(const RunConfig&) const = default;
};

// Throws ConfigError on an unknown key or a malformed value.
void ApplySetting(RunConfig& config, std::string_view key,
                  std::string_view value);

// Flat `key = value` lines; `#` starts a comment. Throws ParseError.
RunConfig ParseRunConfig(std::istream& in, RunConfig base = {});
RunConfig LoadRunConfig(const std::filesystem::path& path,
                        RunConfig base = {});

// Every key, one per line, in a form ParseRunConfig accepts.
void WriteRunConfig(std::ostream& out, const RunConfig& config);

// Epoch log row without wall-clock time, so reruns compare byte for byte.
void WriteEpochLogHeader(std::ostream& out);
void WriteEpochLogRow(std::ostream& out, const EpochStats& stats);

// argv without the program name. Returns an ExitCode.
int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err);

}  // namespace cmi

#endif  // CMI_CLI_H_
