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

#include "residrl/checkpoint.hpp"
#include "residrl/domain_config.hpp"
#include "residrl/nn.hpp"
#include "residrl/sim.hpp"

namespace residrl {

/// Dense shaping for pretraining: follow the reversed disassembly path.
struct ImitationRewardConfig {
  int waypoint_count = 5;
  double w_dist = 0.1;      // per mm to the nearest not-yet-passed waypoint
  double w_progress = 0.5;  // per 0-based index of the furthest passed waypoint
  double w_success = 10.0;  // terminal insertion bonus
  double pass_radius_mm = 2.0;
};

/// Sticky waypoint-pass bookkeeping for one episode. A waypoint counts as
/// passed once the end effector has come within pass_radius_mm of it, and it
/// stays passed, so the progress term never decreases within an episode.
class ImitationTracker {
 public:
  ImitationTracker(std::vector<Pose2> path, const ImitationRewardConfig& cfg);

  void reset();
  /// Marks new passes at `ee`, then scores the state. The success bonus is
  /// added only when `success` is set (the terminal insertion step).
  double reward(const Pose2& ee, bool success);
  int furthest_passed() const { return furthest_; }  // -1 before any pass

 private:
  std::vector<Pose2> path_;
  ImitationRewardConfig cfg_;
  std::vector<char> passed_;
  int furthest_ = -1;
};

struct PpoConfig {
  int n_envs = 8;
  int rollout_len = 256;
  double clip_ratio = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatch_size = 256;
  double lr = 3e-4;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  long total_env_steps = 1500000;
  std::vector<int> hidden = {128, 128};
  double init_log_std = -0.5;
  // Per-episode socket randomization during training rollouts.
  double socket_jitter_mm = 5.0;
  double socket_jitter_deg = 5.0;
  // Early stopping on the unjittered evaluation condition.
  int eval_every_iters = 10;
  int eval_episodes = 100;
  double early_stop_success = 0.90;

  void validate() const;
};

struct GaeResult {
  VectorXd advantages;
  VectorXd returns;
};

/// Generalized advantage estimation over one trajectory segment. dones masks
/// the bootstrap across episode boundaries; last_value bootstraps the segment
/// end when the final step is not terminal. returns = advantages + values.
GaeResult compute_gae(const VectorXd& rewards, const VectorXd& values,
                      const std::vector<uint8_t>& dones, double gamma,
                      double lambda, double last_value = 0.0);

struct PpoBatch {
  MatrixXd obs;           // [obs_dim x B]
  MatrixXd actions;       // [act_dim x B], pre-clamp samples
  VectorXd old_log_prob;  // under the rollout-time policy
  VectorXd advantages;    // raw; normalized inside ppo_update
  VectorXd returns;
};

struct PpoLosses {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

/// One clipped-surrogate gradient step on `batch`. Advantages are normalized
/// to exactly zero mean and unit population std before the surrogate.
/// Throws on non-finite losses.
PpoLosses ppo_update(GaussianPolicy& policy, Mlp& value_fn, Adam& policy_opt,
                     Adam& value_opt, const PpoBatch& batch,
                     const PpoConfig& cfg);

struct CurveRow {
  long iteration = 0;
  long env_steps = 0;
  double mean_reward = 0.0;
  double eval_success = 0.0;  // most recent evaluation result
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<CurveRow> curve;
  bool reached_threshold = false;
  double final_eval_success = 0.0;
  long env_steps = 0;
};

/// Fixed diagonal input scaling for the base policy and its value function.
/// Millimeter and degree inputs are mapped into roughly [-1, 1] so the tanh
/// trunks operate away from saturation. These constants are part of the
/// checkpoint contract: every consumer of a base-policy checkpoint feeds
/// observations through base_obs_vector.
VectorXd base_obs_scale();
VectorXd base_obs_vector(const BaseObs& obs);

GaussianPolicy make_base_policy(const PpoConfig& cfg);
/// Deterministic base action (distribution mean, pre-clamp) at one obs.
ActionDelta base_policy_mean(const GaussianPolicy& policy, const BaseObs& obs);

Checkpoint base_policy_checkpoint(const GaussianPolicy& policy,
                                  const Mlp* value_fn = nullptr);
GaussianPolicy base_policy_from_checkpoint(const Checkpoint& ck);

/// Mean-action success rate over fresh episodes in `domain` (no jitter).
double evaluate_base_success(const GaussianPolicy& policy,
                             const DomainConfig& domain, int episodes,
                             uint64_t seed);

/// PPO pretraining in the (nominal) domain with dense path-imitation reward
/// and per-episode socket jitter. Fully deterministic given (cfg, domain,
/// seed). Stops early once the evaluation threshold is met.
PretrainResult pretrain(const PpoConfig& cfg, const DomainConfig& domain,
                        uint64_t seed,
                        const ImitationRewardConfig& reward_cfg = {});

void write_curve_csv(const std::string& path,
                     const std::vector<CurveRow>& curve);

}  // namespace residrl
