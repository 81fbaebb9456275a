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
#include <string>
#include <vector>

#include "residrl/base_trainer.hpp"
#include "residrl/domain_config.hpp"
#include "residrl/residual_learner.hpp"

namespace residrl {

/// One experiment described as a flat key-value file (same format as domain
/// files, including the single-level include directive). Domain keys hold
/// paths to domain files, resolved relative to the config file; absent keys
/// fall back to the built-in defaults. Training hyperparameters are
/// overridden per field under the `ppo.` and `rlpd.` prefixes. Unknown keys
/// are rejected so typos cannot silently revert a field to its default.
struct ExperimentConfig {
  DomainConfig sim_domain;       // pretraining domain
  DomainConfig real_domain;      // deployment domain
  DomainConfig transfer_domain;  // cross-task scenario domain
  PpoConfig ppo;
  RlpdConfig rlpd;

  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int n_demos = 20;
  int eval_episodes = 20;
  // Root of evaluation episode streams; per-seed streams are split off so
  // every policy variant of one training seed sees identical episodes.
  uint64_t eval_seed = 9000;
  // Output root from the config file; "" defers to the flag/env/default
  // resolution in the command layer.
  std::string out;

  /// Throws KvParseError on malformed files, unknown keys, empty seed lists,
  /// or referenced domain files that do not exist or do not parse;
  /// std::invalid_argument when an overridden config fails validation.
  static ExperimentConfig load(const std::string& path);
};

}  // namespace residrl
