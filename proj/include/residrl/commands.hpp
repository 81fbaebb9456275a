// Copyright 2026 The residrl Authors
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
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace residrl {

/// Exit-status taxonomy, kept coarse so CI can classify failures without
/// parsing messages.
constexpr int kExitOk = 0;
/// Training finished but missed its threshold (pretrain only).
constexpr int kExitThresholdMissed = 1;
/// Config or usage problem: parse failure, unknown key or name, invalid
/// values, refusing to overwrite an existing run directory without --force.
constexpr int kExitConfig = 2;
/// Environment calibration failure: the demo-collection success floor.
constexpr int kExitCalibration = 3;
/// A required upstream artifact is missing; the message names the file.
constexpr int kExitMissingArtifact = 4;

class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& path)
      : std::runtime_error("missing upstream artifact: " + path),
        path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Parsed command line, independent of the flag-parsing front end so the
/// command layer is directly testable.
struct CommandArgs {
  std::string command;
  std::string config_path;
  std::optional<uint64_t> seed;   // --seed; defaults to the config's first
  std::vector<uint64_t> seeds;    // --seeds; defaults to the config list
  std::optional<int> n;           // --n (collect-demos)
  std::optional<int> episodes;    // --episodes (eval, sweep)
  std::string variant = "full";   // --variant; eval also accepts base-only
  std::string domain = "real";    // --domain: real, sim, transfer
  std::string out;                // --out; overrides env and config
  bool force = false;
};

/// Deterministic artifact locations under an output root. Run directories are
/// named by their parameters, never by wall time, so reruns are byte-stable
/// and the overwrite guard has a fixed target; timestamps appear only inside
/// run_info.json.
std::string pretrain_dir(const std::string& root, uint64_t seed);
std::string base_ckpt_path(const std::string& root, uint64_t seed);
std::string demos_dir(const std::string& root, uint64_t seed, int n);
std::string residual_dir(const std::string& root, const std::string& variant,
                         uint64_t seed);
std::string residual_ckpt_path(const std::string& root,
                               const std::string& variant, uint64_t seed);

/// Output root precedence: --out flag, then $RESIDRL_OUT, then the config's
/// `out` key, then "out".
std::string resolve_out_root(const std::string& flag_out,
                             const std::string& config_out);

/// Executes one command end to end: loads the config, runs the wrapped
/// operation, writes artifacts plus run_info.json, and maps every failure
/// onto the exit taxonomy (printing the reason to `err`). Progress and final
/// summaries go to `out`; `eval` ends with a single-line JSON record there.
int run_command(const CommandArgs& args, std::ostream& out = std::cout,
                std::ostream& err = std::cerr);

}  // namespace residrl
