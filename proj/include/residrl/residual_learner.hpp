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
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "residrl/base_trainer.hpp"
#include "residrl/checkpoint.hpp"
#include "residrl/domain_config.hpp"
#include "residrl/nn.hpp"
#include "residrl/render.hpp"
#include "residrl/sim.hpp"

namespace residrl {

/// Storage form of one residual observation. Images are kept 8-bit quantized;
/// the acting path quantizes its freshly rendered views through the same
/// round-trip, so live and replayed observations are bitwise identical inputs.
/// goal_pose_noisy is auxiliary state for the state-only policy variant; the
/// image policy never reads it (its only routes to the socket are the images
/// and the wrench).
struct ObsRecord {
  Pose2 ee_pose;
  Twist2 ee_twist;
  Wrench2 wrench;
  std::array<uint8_t, Image::kPixels> front{};
  std::array<uint8_t, Image::kPixels> wrist{};
  Pose2 goal_pose_noisy;
};

/// One environment step from the residual policy's point of view. Both action
/// fields hold pre-clamp values exactly as the policies produced them; the
/// executed command was clamp(base_action + residual_action). reward is the
/// sparse insertion signal, 1 only on the success step.
struct Transition {
  ObsRecord residual_obs;
  ActionDelta base_action;
  ActionDelta residual_action;
  double reward = 0.0;
  bool done = false;
  ObsRecord next_residual_obs;
  ActionDelta next_base_action;
};

ObsRecord capture_obs(const Simulator& sim);

/// clamp(a_b + a_r): the only place the combined command is clamped.
ActionDelta combine(const ActionDelta& a_b, const ActionDelta& a_r);

/// Admission test for a successful self-collected trajectory: admit iff
/// strictly faster than the median demo length (even-sized multiset takes the
/// mean of the two central values; empty multiset rejects). On admission the
/// new length is inserted, so the median ratchets downward over training.
bool demo_gate(int traj_length, std::multiset<int>& demo_episode_lengths);

/// Demo transitions plus a FIFO online buffer. Demos are organized by
/// trajectory so the length multiset and the eviction rule can see episode
/// boundaries; sampling is uniform over individual transitions. When the
/// trajectory capacity is exceeded, the slowest (longest) trajectory is
/// evicted, oldest first among ties, keeping the buffer biased toward fast
/// successes.
class ReplayStore {
 public:
  ReplayStore(int demo_capacity_traj, int online_capacity);

  /// Bypasses the gate (used to seed the initial demo set).
  void add_demo_trajectory(std::vector<Transition> traj);
  /// Runs demo_gate against the current multiset; admits and evicts as
  /// needed. Returns whether the trajectory was admitted.
  bool try_admit(std::vector<Transition> traj);
  void push_online(const Transition& t);

  int demo_transitions() const { return static_cast<int>(demo_flat_.size()); }
  int demo_trajectories() const { return static_cast<int>(demo_trajs_.size()); }
  int online_size() const { return static_cast<int>(online_.size()); }
  const Transition& demo_at(int i) const { return *demo_flat_[i]; }
  const Transition& online_at(int i) const { return online_[i]; }

  const std::multiset<int>& demo_lengths() const { return demo_lengths_; }
  /// NaN when no demos are stored.
  double demo_median_len() const;

 private:
  void rebuild_flat();

  int demo_capacity_;
  int online_capacity_;
  // insert_order_ pairs with demo_trajs_ so eviction can break length ties
  // toward the oldest trajectory.
  std::vector<std::vector<Transition>> demo_trajs_;
  std::vector<long> insert_order_;
  long next_order_ = 0;
  std::vector<const Transition*> demo_flat_;
  std::deque<Transition> online_;
  std::multiset<int> demo_lengths_;
};

/// Equal-parts batch: exactly half demo, half online, uniform with
/// replacement within each buffer. The demo half occupies items[0..B/2).
/// Pointers are valid until the next ReplayStore mutation, so a batch must be
/// consumed before the actor pushes again (the sequential loop guarantees it).
struct SampleBatch {
  std::vector<const Transition*> items;
  int n_demo = 0;
  int n_online = 0;
  // Online buffer was empty, so the whole batch came from demos (warm-up).
  bool demo_only = false;
};

SampleBatch symmetric_sample(const ReplayStore& store, int batch_size,
                             Rng& rng);

/// Soft-actor-critic backup target for the sparse {0,1} reward:
/// y = r + gamma * (1 - done) * (min_q_next - alpha_log_pi_next).
double td_target(double reward, bool done, double gamma, double min_q_next,
                 double alpha_log_pi_next);

/// Ablation switches. All four default to the full method; each flag removes
/// exactly one ingredient so ablation rows stay single-difference.
struct ResidualVariant {
  // Policy consumes camera views through the encoder; off replaces them with
  // the noisy goal pose (state-only variant).
  bool use_images = true;
  // The base action is part of the policy/critic input; off zero-masks that
  // input block (the base action is still executed).
  bool base_action_input = true;
  // Replaces the base policy with a zero action everywhere: execution,
  // inputs, and stored demos (demo actions are re-expressed as pure residual
  // over a zero base, preserving the executed commands).
  bool zero_base_action = false;
  // Successful online episodes may be gated into the demo buffer; off freezes
  // the demo set at the initial demonstrations.
  bool admit_demos = true;

  static ResidualVariant full() { return {}; }
  static ResidualVariant no_demo_update();
  static ResidualVariant no_base_action();
  static ResidualVariant state_based();
  static ResidualVariant scratch();
};

struct RlpdConfig {
  int batch_size = 256;
  int utd_ratio = 4;  // critic gradient steps per env step
  double gamma = 0.99;
  double tau = 0.005;  // target-network smoothing per critic step
  double entropy_target = -3.0;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  int demo_capacity = 100;       // trajectories
  int online_capacity = 100000;  // transitions
  long max_env_steps = 30000;
  int actor_period = 1;  // env steps between actor/temperature updates
  int eval_every = 2500;
  int eval_episodes = 20;
  int enc_hidden = 32;
  int enc_feature = 32;  // per view
  std::vector<int> hidden = {64, 64};
  double init_log_std_bias = -1.0;
  double init_log_alpha = -3.0;

  void validate() const;
};

/// Fixed diagonal scaling for the residual policy's non-image inputs, part of
/// the residual checkpoint contract exactly like base_obs_scale.
VectorXd residual_proprio_scale();

/// Encoders consume 2x2 mean-pooled 16x16 views (256 inputs per view),
/// centered to [-0.5, 0.5]. Pooling quarters the dominant GEMM cost while a
/// pooled wrist pixel still spans only 2 mm.
constexpr int kEncPool = 2;
constexpr int kEncPixels = (Image::kW / kEncPool) * (Image::kH / kEncPool);

/// Residual actor: optional two-view encoder plus a state-dependent-std
/// Gaussian trunk over [features|goal] ++ proprio ++ base action. Variant
/// flags select the input layout; zero-masked blocks keep the layout fixed so
/// every variant shares one checkpoint shape.
class ResidualPolicy {
 public:
  ResidualPolicy(const ResidualVariant& variant, const RlpdConfig& cfg);

  const ResidualVariant& variant() const { return variant_; }
  int input_dim() const { return input_dim_; }
  GaussianPolicy& actor() { return actor_; }
  const GaussianPolicy& actor() const { return actor_; }
  ImageEncoder& encoder() { return *encoder_; }
  const ImageEncoder& encoder() const { return *encoder_; }
  bool has_encoder() const { return encoder_.has_value(); }

  /// Warm start: zero mean head (combined policy == base policy) with the
  /// configured log_std bias.
  void init(Rng& rng, double log_std_bias);

  /// Single-observation acting path (cache-free).
  GaussianPolicy::Dist forward_obs(const ObsRecord& obs,
                                   const ActionDelta& a_b) const;

  /// Pooled, centered pixel column for one stored view; [kEncPixels x 1]
  /// layout matches the batched training path.
  static VectorXd pooled_pixels(const std::array<uint8_t, Image::kPixels>& q);

  /// Non-image input block (proprio scaled, plus goal for the state variant,
  /// plus the possibly masked base action).
  VectorXd tail_block(const ObsRecord& obs, const ActionDelta& a_b) const;
  int tail_dim() const { return input_dim_ - feature_dim(); }
  int feature_dim() const { return encoder_ ? encoder_->feature_dim() : 0; }

 private:
  ResidualVariant variant_;
  std::optional<ImageEncoder> encoder_;
  GaussianPolicy actor_;
  int input_dim_;
};

/// A deployable policy pair. base == nullptr means a zero base action (the
/// from-scratch ablation); residual == nullptr means base-only.
struct PolicyStack {
  const GaussianPolicy* base = nullptr;
  const ResidualPolicy* residual = nullptr;
};

/// Pre-clamp base command for the stack (distribution mean, or zero without a
/// base policy).
ActionDelta stack_base_action(const PolicyStack& stack, const Simulator& sim);

struct EpisodeOutcome {
  bool success = false;
  int steps = 0;
};

/// One deterministic episode at distribution means (evaluation path; the only
/// randomness is the simulator's own episode stream).
EpisodeOutcome run_episode(Simulator& sim, const PolicyStack& stack,
                           uint64_t episode_seed);

/// Raised when demo collection's rolling success rate falls below the floor:
/// a base policy this weak cannot seed residual training.
class DemoFloorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DemoCollection {
  std::vector<std::vector<Transition>> trajectories;
  long attempts = 0;
  // Standardized pre-clamp residual moments pooled over every attempted step
  // (failures included): z = a_r / sigma per dimension. The executed-action
  // distribution claim (combined preclamp ~ N(mu, sigma)) is checked on
  // these.
  long z_count = 0;
  std::array<double, 3> z_sum{};
  std::array<double, 3> z_sq_sum{};
};

/// Roll out the base policy with Gaussian residual pseudo-labels
/// (a_b = mean, a_r ~ N(0, sigma), executed clamp(a_b + a_r)), keeping only
/// successful trajectories until n_target are collected. Throws
/// DemoFloorError when the success rate over the trailing floor_window
/// attempts drops below floor_rate.
DemoCollection collect_demos(const GaussianPolicy& base,
                             const DomainConfig& domain_real, int n_target,
                             uint64_t seed, double floor_rate = 0.05,
                             int floor_window = 200);

/// Directory of per-trajectory binary records (versioned header, transition
/// count, packed fields).
void save_demos(const std::string& dir,
                const std::vector<std::vector<Transition>>& trajs);
std::vector<std::vector<Transition>> load_demos(const std::string& dir);

/// Re-express demos over a zero base action: a_r <- a_b + a_r, a_b <- 0.
/// Executed commands are unchanged, so the from-scratch ablation trains on
/// the same behavior data.
std::vector<std::vector<Transition>> fold_base_into_residual(
    std::vector<std::vector<Transition>> trajs);

struct RlpdLosses {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double mean_q = 0.0;
  double mean_log_pi = 0.0;
  bool demo_only_batch = false;
};

struct ResidualMetricsRow {
  long env_step = 0;
  double eval_success = 0.0;
  double mean_cycle_time_s = 0.0;  // NaN when no episode succeeded
  double demo_median_len = 0.0;
};

void write_metrics_csv(const std::string& path,
                       const std::vector<ResidualMetricsRow>& rows);

struct ResidualTrainResult {
  Checkpoint checkpoint;
  std::vector<ResidualMetricsRow> metrics;
  double final_eval_success = 0.0;
  double final_cycle_time_s = 0.0;
  long env_steps = 0;
  long demos_admitted = 0;
};

/// Soft actor-critic state for the residual policy: clipped double critic
/// with polyak targets, shared image encoder trained by the critic loss only
/// (actor and targets consume its features without gradients), and an
/// auto-tuned entropy temperature. Deterministic in (cfg, variant, seed).
class ResidualLearner {
 public:
  ResidualLearner(const RlpdConfig& cfg, const ResidualVariant& variant,
                  uint64_t seed);

  const RlpdConfig& cfg() const { return cfg_; }
  ResidualPolicy& policy() { return policy_; }
  const ResidualPolicy& policy() const { return policy_; }
  CriticEnsemble& critics() { return critics_; }
  CriticEnsemble& target_critics() { return targets_; }
  ReplayStore& store() { return store_; }
  double alpha() const { return std::exp(log_alpha_[0]); }
  long updates() const { return update_count_; }

  /// Seeds the demo buffer and the length multiset (one entry per
  /// trajectory). Applies the zero-base re-expression for that variant.
  void seed_demos(const std::vector<std::vector<Transition>>& demos);

  /// One critic gradient step (with target polyak), plus one actor and
  /// temperature step when update_actor is set. Throws on non-finite losses
  /// with buffer diagnostics.
  RlpdLosses rlpd_update(bool update_actor = true);

  /// Success rate and mean cycle time of the combined policy at distribution
  /// means, over cfg.eval_episodes fresh episodes.
  ResidualMetricsRow evaluate(const GaussianPolicy* base,
                              const DomainConfig& domain, long env_step,
                              uint64_t eval_seed);

  Checkpoint make_checkpoint() const;

 private:
  MatrixXd assemble_tail(const SampleBatch& batch, bool next) const;
  void pixel_matrices(const SampleBatch& batch, bool next, MatrixXd& front,
                      MatrixXd& wrist) const;

  RlpdConfig cfg_;
  ResidualVariant variant_;
  ResidualPolicy policy_;
  CriticEnsemble critics_;
  CriticEnsemble targets_;
  ReplayStore store_;
  VectorXd log_alpha_;
  Adam actor_opt_;
  std::vector<Adam> critic_opts_;
  std::optional<Adam> enc_front_opt_;
  std::optional<Adam> enc_wrist_opt_;
  Adam alpha_opt_;
  Rng update_rng_;
  long update_count_ = 0;
};

/// The interleaved act/update loop: step the environment with
/// clamp(a_b + a_r), a_r sampled from the residual policy; store every
/// transition online; gate successful episodes into the demo buffer; run
/// cfg.utd_ratio critic updates per env step; evaluate every cfg.eval_every
/// steps. base_policy may be nullptr only for the zero-base variant.
/// max_env_steps == 0 returns the untrained warm-start checkpoint.
ResidualTrainResult train_residual(
    const GaussianPolicy* base_policy, const DomainConfig& domain_real,
    const std::vector<std::vector<Transition>>& demos, const RlpdConfig& cfg,
    uint64_t seed, const ResidualVariant& variant = ResidualVariant::full());

Checkpoint residual_checkpoint(const ResidualLearner& learner);
/// Rebuilds the deployable policy (actor + encoder + variant) from a
/// checkpoint produced by residual_checkpoint / train_residual.
ResidualPolicy residual_policy_from_checkpoint(const Checkpoint& ck);

}  // namespace residrl
