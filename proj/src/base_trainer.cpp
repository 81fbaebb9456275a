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

#include "residrl/base_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace residrl {

ImitationTracker::ImitationTracker(std::vector<Pose2> path,
                                   const ImitationRewardConfig& cfg)
    : path_(std::move(path)), cfg_(cfg) {
  if (path_.empty()) {
    throw std::invalid_argument("ImitationTracker: empty path");
  }
  if (cfg_.w_dist < 0 || cfg_.w_progress < 0 || cfg_.w_success < 0) {
    throw std::invalid_argument("ImitationTracker: negative reward weight");
  }
  passed_.assign(path_.size(), 0);
}

void ImitationTracker::reset() {
  std::fill(passed_.begin(), passed_.end(), 0);
  furthest_ = -1;
}

double ImitationTracker::reward(const Pose2& ee, bool success) {
  const int before = furthest_;
  for (size_t i = 0; i < path_.size(); ++i) {
    if (passed_[i]) continue;
    const double d = std::hypot(ee.x - path_[i].x, ee.y - path_[i].y);
    if (d <= cfg_.pass_radius_mm) {
      passed_[i] = 1;
      furthest_ = std::max(furthest_, static_cast<int>(i));
    }
  }
  double nearest_unpassed = 0.0;
  bool any_unpassed = false;
  for (size_t i = 0; i < path_.size(); ++i) {
    if (passed_[i]) continue;
    const double d = std::hypot(ee.x - path_[i].x, ee.y - path_[i].y);
    nearest_unpassed = any_unpassed ? std::min(nearest_unpassed, d) : d;
    any_unpassed = true;
  }
  // The progress level is paid only on steps where the furthest-passed index
  // improves. Paying it every step makes loitering short of insertion
  // out-earn the terminal bonus, and policies learn to hover forever.
  const double progress = furthest_ > before
                              ? cfg_.w_progress * std::max(0, furthest_)
                              : 0.0;
  return -cfg_.w_dist * (any_unpassed ? nearest_unpassed : 0.0) + progress +
         (success ? cfg_.w_success : 0.0);
}

void PpoConfig::validate() const {
  if (n_envs < 1 || rollout_len < 1 || epochs < 1 || minibatch_size < 1) {
    throw std::invalid_argument("PpoConfig: counts must be positive");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("PpoConfig: gamma must be in (0,1)");
  }
  if (!(clip_ratio > 0.0)) {
    throw std::invalid_argument("PpoConfig: clip_ratio must be positive");
  }
  if (gae_lambda < 0.0 || gae_lambda > 1.0) {
    throw std::invalid_argument("PpoConfig: gae_lambda must be in [0,1]");
  }
  if (minibatch_size > n_envs * rollout_len) {
    throw std::invalid_argument("PpoConfig: minibatch exceeds rollout batch");
  }
  if (hidden.empty()) {
    throw std::invalid_argument("PpoConfig: at least one hidden layer");
  }
}

GaeResult compute_gae(const VectorXd& rewards, const VectorXd& values,
                      const std::vector<uint8_t>& dones, double gamma,
                      double lambda, double last_value) {
  const auto T = rewards.size();
  if (values.size() != T || static_cast<Eigen::Index>(dones.size()) != T) {
    throw std::invalid_argument("compute_gae: length mismatch");
  }
  GaeResult out;
  out.advantages.resize(T);
  out.returns.resize(T);
  double gae = 0.0;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const double not_done = dones[t] ? 0.0 : 1.0;
    const double next_v = (t == T - 1) ? last_value : values[t + 1];
    const double delta = rewards[t] + gamma * not_done * next_v - values[t];
    gae = delta + gamma * lambda * not_done * gae;
    out.advantages[t] = gae;
  }
  out.returns = out.advantages + values;
  return out;
}

PpoLosses ppo_update(GaussianPolicy& policy, Mlp& value_fn, Adam& policy_opt,
                     Adam& value_opt, const PpoBatch& batch,
                     const PpoConfig& cfg) {
  const auto B = batch.old_log_prob.size();
  if (batch.obs.cols() != B || batch.actions.cols() != B ||
      batch.advantages.size() != B || batch.returns.size() != B) {
    throw std::invalid_argument("ppo_update: inconsistent batch");
  }

  // Exact normalization: zero mean, unit population std. Degenerate batches
  // (constant advantage) collapse to zeros instead of dividing by ~0.
  VectorXd adv = batch.advantages;
  adv.array() -= adv.mean();
  const double sd = std::sqrt(adv.squaredNorm() / static_cast<double>(B));
  if (sd > 1e-12) adv /= sd;

  auto d = policy.forward(batch.obs);
  const VectorXd lp = GaussianPolicy::log_prob(d, batch.actions);
  const VectorXd ratio = (lp - batch.old_log_prob).array().exp();
  const VectorXd clipped =
      ratio.array().min(1.0 + cfg.clip_ratio).max(1.0 - cfg.clip_ratio);
  const VectorXd s1 = ratio.array() * adv.array();
  const VectorXd s2 = clipped.array() * adv.array();
  const VectorXd surr = s1.cwiseMin(s2);

  PpoLosses out;
  out.policy_loss = -surr.mean();
  out.entropy = GaussianPolicy::entropy(d).mean();
  out.clip_fraction =
      (s2.array() < s1.array()).cast<double>().sum() / static_cast<double>(B);

  // Gradient of -mean(min(s1, s2)) w.r.t. log_prob: only samples where the
  // unclipped branch is active contribute (ties resolve to unclipped).
  const double invB = 1.0 / static_cast<double>(B);
  VectorXd dlp(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const bool unclipped = s1[i] <= s2[i];
    dlp[i] = unclipped ? -invB * adv[i] * ratio[i] : 0.0;
  }

  const MatrixXd std_dev = d.log_std.array().exp();
  const MatrixXd z = (batch.actions - d.mean).array() / std_dev.array();
  MatrixXd d_mean = z.array() / std_dev.array();
  MatrixXd d_log_std = z.array().square() - 1.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    d_mean.col(i) *= dlp[i];
    d_log_std.col(i) *= dlp[i];
  }
  // Entropy bonus: d(-coef * mean entropy)/d log_std = -coef / B per entry.
  d_log_std.array() -= cfg.entropy_coef * invB;

  policy.zero_grad();
  policy.backward(d_mean, d_log_std);

  MatrixXd v = value_fn.forward(batch.obs);
  const Eigen::RowVectorXd err = v.row(0) - batch.returns.transpose();
  out.value_loss = cfg.value_coef * err.squaredNorm() * invB;
  MatrixXd dv = (2.0 * cfg.value_coef * invB) * err;
  value_fn.zero_grad();
  value_fn.backward(dv);

  if (!std::isfinite(out.policy_loss) || !std::isfinite(out.value_loss) ||
      !std::isfinite(out.entropy)) {
    std::ostringstream msg;
    msg << "ppo_update: non-finite loss (policy=" << out.policy_loss
        << ", value=" << out.value_loss << ", entropy=" << out.entropy
        << ", max|ratio|=" << ratio.cwiseAbs().maxCoeff() << ")";
    throw std::runtime_error(msg.str());
  }

  VectorXd p = policy.params_flat();
  policy_opt.step(p, policy.grad_flat());
  policy.set_params_flat(p);
  value_opt.step(value_fn.params(), value_fn.grad());
  return out;
}

VectorXd base_obs_scale() {
  VectorXd s(BaseObs::kDim);
  // ee pose (x mm, y mm, theta deg), ee twist (mm/s, mm/s, deg/s),
  // noisy goal pose, goal-minus-ee delta.
  s << 1.0 / 50, 1.0 / 50, 1.0 / 180, 1.0 / 100, 1.0 / 100, 1.0 / 180,
      1.0 / 50, 1.0 / 50, 1.0 / 180, 1.0 / 20, 1.0 / 20, 1.0 / 45;
  return s;
}

VectorXd base_obs_vector(const BaseObs& obs) {
  static const VectorXd scale = base_obs_scale();
  const auto flat = obs.flatten();
  VectorXd v(BaseObs::kDim);
  for (int i = 0; i < BaseObs::kDim; ++i) v[i] = flat[i] * scale[i];
  return v;
}

GaussianPolicy make_base_policy(const PpoConfig& cfg) {
  std::vector<int> sizes;
  sizes.push_back(BaseObs::kDim);
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(3);
  return GaussianPolicy(MlpSpec{sizes, Activation::kTanh, false}, 3, false);
}

ActionDelta base_policy_mean(const GaussianPolicy& policy, const BaseObs& obs) {
  MatrixXd col = base_obs_vector(obs);
  auto d = policy.forward_nograd(col);
  return ActionDelta{d.mean(0, 0), d.mean(1, 0), d.mean(2, 0)};
}

Checkpoint base_policy_checkpoint(const GaussianPolicy& policy,
                                  const Mlp* value_fn) {
  Checkpoint ck;
  ck.add("policy_trunk", policy.trunk().params());
  ck.add("policy_free_log_std", policy.free_log_std());
  if (value_fn != nullptr) ck.add("value", value_fn->params());
  nlohmann::json hidden = nlohmann::json::array();
  const auto& sizes = policy.trunk().spec().layer_sizes;
  for (size_t i = 1; i + 1 < sizes.size(); ++i) hidden.push_back(sizes[i]);
  ck.meta["kind"] = "base_policy";
  ck.meta["obs_dim"] = BaseObs::kDim;
  ck.meta["act_dim"] = policy.act_dim();
  ck.meta["hidden"] = hidden;
  return ck;
}

GaussianPolicy base_policy_from_checkpoint(const Checkpoint& ck) {
  if (!ck.meta.contains("kind") || ck.meta["kind"] != "base_policy") {
    throw std::runtime_error("checkpoint is not a base policy");
  }
  PpoConfig cfg;
  cfg.hidden = ck.meta["hidden"].get<std::vector<int>>();
  GaussianPolicy policy = make_base_policy(cfg);
  if (ck.get("policy_trunk").size() != policy.trunk().num_params()) {
    throw std::runtime_error("base policy checkpoint: trunk size mismatch");
  }
  policy.trunk().params() = ck.get("policy_trunk");
  policy.free_log_std() = ck.get("policy_free_log_std");
  return policy;
}

double evaluate_base_success(const GaussianPolicy& policy,
                             const DomainConfig& domain, int episodes,
                             uint64_t seed) {
  Simulator sim(domain);
  Rng rng(seed);
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    sim.reset(rng.next_u64());
    for (;;) {
      const ActionDelta a =
          clamp_action(base_policy_mean(policy, sim.obs_base()));
      const StepResult r = sim.step(a);
      if (r.success) ++successes;
      if (r.done) break;
    }
  }
  return static_cast<double>(successes) / episodes;
}

namespace {

DomainConfig jittered_domain(const DomainConfig& domain, const PpoConfig& cfg,
                             Rng& rng) {
  DomainConfig c = domain;
  c.socket_pose_true.x += rng.uniform(-cfg.socket_jitter_mm, cfg.socket_jitter_mm);
  c.socket_pose_true.y += rng.uniform(-cfg.socket_jitter_mm, cfg.socket_jitter_mm);
  c.socket_pose_true.theta = wrap_deg(
      c.socket_pose_true.theta + rng.uniform(-cfg.socket_jitter_deg, cfg.socket_jitter_deg));
  // The randomized placement is announced through the goal observation; the
  // domain's own goal noise still applies on top at reset.
  c.socket_pose_belief = c.socket_pose_true;
  return c;
}

struct EnvSlot {
  std::unique_ptr<Simulator> sim;
  std::unique_ptr<ImitationTracker> tracker;
  Rng rng{0};
};

void reset_env(EnvSlot& slot, const DomainConfig& domain, const PpoConfig& cfg,
               const ImitationRewardConfig& reward_cfg) {
  DomainConfig c = jittered_domain(domain, cfg, slot.rng);
  slot.sim = std::make_unique<Simulator>(c);
  slot.sim->reset(slot.rng.next_u64());
  slot.tracker = std::make_unique<ImitationTracker>(
      disassembly_path(c, reward_cfg.waypoint_count), reward_cfg);
}

}  // namespace

PretrainResult pretrain(const PpoConfig& cfg, const DomainConfig& domain,
                        uint64_t seed,
                        const ImitationRewardConfig& reward_cfg) {
  cfg.validate();
  const int N = cfg.n_envs;
  const int T = cfg.rollout_len;
  const int M = N * T;

  Rng master(seed);
  Rng init_rng = master.split(0);
  Rng sample_rng = master.split(1);
  Rng shuffle_rng = master.split(2);
  Rng eval_rng = master.split(3);

  GaussianPolicy policy = make_base_policy(cfg);
  policy.init(init_rng);
  policy.free_log_std().setConstant(cfg.init_log_std);

  std::vector<int> vsizes;
  vsizes.push_back(BaseObs::kDim);
  vsizes.insert(vsizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  vsizes.push_back(1);
  Mlp value_fn(MlpSpec{vsizes, Activation::kTanh, false});
  value_fn.init(init_rng);

  Adam policy_opt(policy.num_params(), cfg.lr);
  Adam value_opt(value_fn.num_params(), cfg.lr);

  std::vector<EnvSlot> envs(N);
  for (int i = 0; i < N; ++i) {
    envs[i].rng = master.split(100 + static_cast<uint64_t>(i));
    reset_env(envs[i], domain, cfg, reward_cfg);
  }

  PretrainResult result;
  double last_eval = 0.0;
  long steps_done = 0;
  long iteration = 0;
  bool early_stopped = false;

  MatrixXd obs_buf(BaseObs::kDim, M);
  MatrixXd act_buf(3, M);
  VectorXd lp_buf(M);
  MatrixXd rew(T, N), val(T, N);
  std::vector<std::vector<uint8_t>> done_cols(N, std::vector<uint8_t>(T));

  while (steps_done < cfg.total_env_steps) {
    MatrixXd step_obs(BaseObs::kDim, N);
    double reward_sum = 0.0;
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < N; ++i) {
        step_obs.col(i) = base_obs_vector(envs[i].sim->obs_base());
      }
      auto d = policy.forward_nograd(step_obs);
      MatrixXd a = GaussianPolicy::sample(d, sample_rng);
      VectorXd lp = GaussianPolicy::log_prob(d, a);
      MatrixXd v = value_fn.forward_nograd(step_obs);
      for (int i = 0; i < N; ++i) {
        const int idx = t * N + i;
        obs_buf.col(idx) = step_obs.col(i);
        act_buf.col(idx) = a.col(i);
        lp_buf[idx] = lp[i];
        val(t, i) = v(0, i);
        const ActionDelta exec = clamp_action(a(0, i), a(1, i), a(2, i));
        const StepResult r = envs[i].sim->step(exec);
        rew(t, i) =
            envs[i].tracker->reward(envs[i].sim->state().ee_pose, r.success);
        done_cols[i][t] = r.done ? 1 : 0;
        reward_sum += rew(t, i);
        if (r.done) reset_env(envs[i], domain, cfg, reward_cfg);
      }
    }
    steps_done += M;

    // Bootstrap values at the rollout cut; masked out where the final step
    // ended an episode.
    for (int i = 0; i < N; ++i) {
      step_obs.col(i) = base_obs_vector(envs[i].sim->obs_base());
    }
    MatrixXd last_v = value_fn.forward_nograd(step_obs);

    VectorXd adv_buf(M), ret_buf(M);
    for (int i = 0; i < N; ++i) {
      GaeResult g = compute_gae(rew.col(i), val.col(i), done_cols[i],
                                cfg.gamma, cfg.gae_lambda, last_v(0, i));
      for (int t = 0; t < T; ++t) {
        adv_buf[t * N + i] = g.advantages[t];
        ret_buf[t * N + i] = g.returns[t];
      }
    }

    std::vector<int> perm(M);
    for (int i = 0; i < M; ++i) perm[i] = i;
    for (int e = 0; e < cfg.epochs; ++e) {
      for (int i = M - 1; i > 0; --i) {
        const auto j = static_cast<int>(
            shuffle_rng.uniform_index(static_cast<uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
      }
      const int n_batches = M / cfg.minibatch_size;
      for (int b = 0; b < n_batches; ++b) {
        PpoBatch batch;
        const int mb = cfg.minibatch_size;
        batch.obs.resize(BaseObs::kDim, mb);
        batch.actions.resize(3, mb);
        batch.old_log_prob.resize(mb);
        batch.advantages.resize(mb);
        batch.returns.resize(mb);
        for (int k = 0; k < mb; ++k) {
          const int src = perm[b * mb + k];
          batch.obs.col(k) = obs_buf.col(src);
          batch.actions.col(k) = act_buf.col(src);
          batch.old_log_prob[k] = lp_buf[src];
          batch.advantages[k] = adv_buf[src];
          batch.returns[k] = ret_buf[src];
        }
        ppo_update(policy, value_fn, policy_opt, value_opt, batch, cfg);
      }
    }

    ++iteration;
    bool stop = false;
    if (iteration % cfg.eval_every_iters == 0) {
      last_eval = evaluate_base_success(policy, domain, cfg.eval_episodes,
                                        eval_rng.next_u64());
      if (last_eval >= cfg.early_stop_success) stop = true;
    }
    result.curve.push_back(
        CurveRow{iteration, steps_done, reward_sum / M, last_eval});
    if (stop) {
      early_stopped = true;
      break;
    }
  }

  if (steps_done > 0 && !early_stopped) {
    // Budget exhausted without a fresh passing evaluation; measure the final
    // policy so the result reflects where training actually ended.
    last_eval = evaluate_base_success(policy, domain, cfg.eval_episodes,
                                      eval_rng.next_u64());
    if (!result.curve.empty()) result.curve.back().eval_success = last_eval;
  }

  result.final_eval_success = last_eval;
  result.reached_threshold = last_eval >= cfg.early_stop_success;
  result.env_steps = steps_done;
  result.checkpoint = base_policy_checkpoint(policy, &value_fn);
  result.checkpoint.meta["env_steps"] = steps_done;
  result.checkpoint.meta["eval_success"] = last_eval;
  result.checkpoint.meta["seed"] = seed;
  return result;
}

void write_curve_csv(const std::string& path,
                     const std::vector<CurveRow>& curve) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write curve csv: " + path);
  f << "iteration,env_steps,mean_reward,eval_success\n";
  f << std::setprecision(10);
  for (const auto& row : curve) {
    f << row.iteration << "," << row.env_steps << "," << row.mean_reward << ","
      << row.eval_success << "\n";
  }
}

}  // namespace residrl
