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

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "residrl/base_trainer.hpp"
#include "residrl/residual_learner.hpp"

namespace residrl {

// ---------------------------------------------------------------------------
// Evaluation reports

struct EvalEpisode {
  uint64_t episode_seed = 0;
  bool success = false;
  int steps = 0;
  double cycle_time_s = 0.0;  // steps * control_dt; NaN when the episode failed
};

struct EvalReport {
  int n_episodes = 0;
  double success_rate = 0.0;
  double mean_cycle_time_s = 0.0;  // over successes only; NaN when none
  std::vector<EvalEpisode> episodes;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Wall-clock duration of a successful episode.
double cycle_time_s(int steps, const DomainConfig& domain);

/// Mean-action evaluation of a policy stack over n_episodes fresh episodes.
/// Episode seeds are successive draws from Rng(seed), so a report is a pure
/// function of (stack parameters, domain, n_episodes, seed).
EvalReport evaluate(const PolicyStack& stack, const DomainConfig& domain,
                    int n_episodes, uint64_t seed);

// ---------------------------------------------------------------------------
// Robustness grid: displaced socket, stale goal belief

/// Socket displacements (mm) of the robustness sweep, in serialization order.
/// The first cell is the undisplaced reference.
inline constexpr std::array<std::array<double, 2>, 5> kGridOffsetsMm = {
    {{0.0, 0.0}, {20.0, 0.0}, {-20.0, 0.0}, {0.0, 20.0}, {0.0, -20.0}}};

/// Copy of `domain` with the physical socket displaced while the believed
/// socket pose (the source of every goal input and of goal noise) stays at
/// the stale original. Images and contacts see the displacement; state-based
/// inputs do not.
DomainConfig displaced_domain(const DomainConfig& domain, double dx_mm,
                              double dy_mm);

struct GridCell {
  double offset_x_mm = 0.0;
  double offset_y_mm = 0.0;
  EvalReport report;
};

struct RobustnessGrid {
  std::array<GridCell, 5> cells;
  double mean_success_all = 0.0;
  double mean_success_displaced = 0.0;  // over the four nonzero offsets

  nlohmann::json to_json() const;
};

/// Evaluates the stack at every grid offset. All cells share the same episode
/// seed stream, so cells differ only by the socket displacement.
RobustnessGrid robustness_sweep(const PolicyStack& stack,
                                const DomainConfig& domain, int n_episodes,
                                uint64_t seed);

// ---------------------------------------------------------------------------
// Artifact cache and experiment pipeline

/// Purpose streams split from one root seed. Demo collection and residual
/// training draw from distinct streams so the stages are decorrelated from
/// pretraining (which consumes the root seed directly) and from each other.
/// Shared by the pipeline and the command layer, so both produce identical
/// artifacts for one root seed.
inline constexpr uint64_t kDemoSeedStream = 101;
inline constexpr uint64_t kTrainSeedStream = 102;

/// Directory store for trained artifacts (checkpoints, demo sets) keyed by
/// short names. Every artifact is a pure function of (configs, seed), and a
/// hit loads bit-identical parameters to a fresh computation, so callers
/// treat hits and misses the same. A stamp file pins the configuration
/// fingerprint; on mismatch the whole store is discarded.
class ExperimentCache {
 public:
  /// An empty root disables caching: every lookup recomputes.
  ExperimentCache(std::string root, uint64_t config_fingerprint);

  const std::string& root() const { return root_; }
  bool enabled() const { return !root_.empty(); }

  /// Loads `<root>/<key>.ck`, or computes, atomically stores, and returns.
  Checkpoint checkpoint(const std::string& key,
                        const std::function<Checkpoint()>& make);

  /// Loads the demo directory `<root>/<key>`, or collects, stores, and
  /// returns. Attempt counts and pseudo-label moment sums are persisted in a
  /// sidecar manifest so cache hits preserve the full collection record.
  DemoCollection demo_set(const std::string& key,
                          const std::function<DemoCollection()>& make);

 private:
  std::string root_;
};

/// Fingerprint of everything the cached artifacts depend on. Field order is
/// part of the fingerprint; extending a config struct must extend this.
uint64_t config_fingerprint(const DomainConfig& nominal,
                            const DomainConfig& real, const PpoConfig& ppo,
                            const RlpdConfig& rlpd);

/// Named residual-variant lookup for command lines and report rows:
/// full, no-demo-update, no-base-action-input, state-based, scratch-rl.
/// Throws std::invalid_argument for unknown names.
ResidualVariant variant_by_name(const std::string& name);

/// End-to-end experiment pipeline bound to one configuration tuple. Produces
/// base checkpoints, demo sets, and trained residual checkpoints, routing
/// every heavy artifact through the cache when one is attached. Checkpoint
/// meta records train_seconds and the training-time summary numbers.
class ExperimentPipeline {
 public:
  ExperimentPipeline(DomainConfig nominal, DomainConfig real, PpoConfig ppo,
                     RlpdConfig rlpd, ExperimentCache* cache = nullptr);

  const DomainConfig& nominal() const { return nominal_; }
  const DomainConfig& real() const { return real_; }
  const PpoConfig& ppo() const { return ppo_; }
  const RlpdConfig& rlpd() const { return rlpd_; }

  /// Demos collected per residual run (successful trajectories).
  int n_demos = 20;

  /// Pretrained base checkpoint. Throws std::runtime_error when pretraining
  /// misses its success threshold: downstream stages would silently degrade
  /// on a weak base.
  Checkpoint base(uint64_t seed);
  GaussianPolicy base_policy(uint64_t seed);

  /// n_target successful demo trajectories collected with base(seed) on
  /// `domain`. The cache key prefix distinguishes collection scenarios.
  DemoCollection demos_on(const DomainConfig& domain,
                          const std::string& key_prefix, uint64_t seed,
                          int n_target);
  /// Demos on the real domain under the default key.
  DemoCollection demos(uint64_t seed);

  /// Residual checkpoint for one variant trained on `domain` with
  /// demos_on(domain, ...). `label` keys the cache and names report rows.
  Checkpoint residual_on(const DomainConfig& domain, const std::string& label,
                         const ResidualVariant& variant, uint64_t seed);
  /// Residual trained on the real domain.
  Checkpoint residual(const std::string& label, const ResidualVariant& variant,
                      uint64_t seed);

 private:
  DomainConfig nominal_;
  DomainConfig real_;
  PpoConfig ppo_;
  RlpdConfig rlpd_;
  ExperimentCache* cache_;
};

// ---------------------------------------------------------------------------
// Ablation table

struct AblationRow {
  std::string name;
  std::vector<double> success_per_seed;
  std::vector<double> cycle_per_seed;  // NaN for seeds with no successes
  double mean_success = 0.0;
  double mean_cycle_time_s = 0.0;  // over seeds with successes; NaN when none
};

struct AblationTable {
  std::vector<uint64_t> seeds;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& name) const;
  nlohmann::json to_json() const;
  /// One line per (variant, seed) plus a mean line per variant. NaN cycle
  /// times serialize as empty cells.
  std::string to_csv() const;
};

/// Trains and evaluates the comparison rows {full, no-demo-update,
/// no-base-action-input, base-only, scratch-rl} on the real domain for every
/// seed. All rows of one seed share the base policy, the demo set, and the
/// evaluation episode stream, so rows differ only in the training variant.
AblationTable run_ablations(ExperimentPipeline& pipe,
                            const std::vector<uint64_t>& seeds,
                            int eval_episodes, uint64_t eval_seed);

// ---------------------------------------------------------------------------
// Transfer scenario

/// Sign statistic of the residual's first contact response. For each episode
/// the first control step whose preceding step produced a nonzero true
/// contact wrench is located; the episode qualifies when the true yaw error
/// there is at least min_err_deg in magnitude. `correct` counts qualifying
/// episodes whose residual mean yaw action opposes the yaw error.
struct ContactYawStat {
  long qualifying = 0;
  long correct = 0;
  // Per qualifying episode: (true yaw error deg, residual mean yaw action).
  std::vector<std::array<double, 2>> samples;

  double agreement() const;  // correct / qualifying; NaN when none qualify
};

ContactYawStat yaw_sign_stat(const PolicyStack& stack,
                             const DomainConfig& domain,
                             const std::vector<uint64_t>& episode_seeds,
                             double min_err_deg);

struct TransferReport {
  EvalReport zero_shot;       // base policy alone on the transfer domain
  EvalReport post_residual;   // base + residual trained on the transfer domain
  ContactYawStat yaw_stat;    // computed on the post-residual stack

  nlohmann::json to_json() const;
};

/// Deploys base(seed) on the transfer domain, trains the full residual
/// variant there on freshly collected demos, and reports before/after
/// evaluations plus the yaw-correction statistic over the post-residual
/// evaluation episodes.
TransferReport transfer_scenario(ExperimentPipeline& pipe,
                                 const DomainConfig& transfer_domain,
                                 uint64_t seed, int eval_episodes,
                                 uint64_t eval_seed);

// ---------------------------------------------------------------------------
// Run directories and report files

/// Output root: $RESIDRL_OUT when set, else "out".
std::string output_root();

/// Refusal to replace an existing run directory without `force`.
class OutputExistsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Creates `<root>/<name>` (parents included). An existing run directory
/// raises OutputExistsError unless `force`, in which case it is replaced.
/// Returns the path.
std::string make_run_dir(const std::string& root, const std::string& name,
                         bool force);

/// UTC wall time as "YYYY-MM-DDTHH:MM:SSZ". The only nondeterministic value
/// that reaches report files; confined to run_info.json.
std::string timestamp_utc();

/// Pretty-printed JSON document with a trailing newline.
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace residrl
