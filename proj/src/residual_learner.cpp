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

#include "residrl/residual_learner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace residrl {

namespace {

constexpr int kActDim = 3;

// RNG stream layout shared by collect_demos and train_residual. Streams are
// split by identity, never by draw position, so adding draws to one role
// cannot shift another.
enum Stream : uint64_t {
  kStreamInit = 0,
  kStreamEnv = 1,
  kStreamAction = 2,
  kStreamUpdate = 3,
  kStreamEval = 4,
};

ActionDelta column_to_action(const MatrixXd& m, int col) {
  return ActionDelta{m(0, col), m(1, col), m(2, col)};
}

}  // namespace

ObsRecord capture_obs(const Simulator& sim) {
  const ResidualObs ro = sim.obs_residual();
  ObsRecord rec;
  rec.ee_pose = ro.ee_pose;
  rec.ee_twist = ro.ee_twist;
  rec.wrench = ro.contact_wrench;
  rec.front = quantize(ro.image_front);
  rec.wrist = quantize(ro.image_wrist);
  rec.goal_pose_noisy = sim.state().goal_pose_noisy;
  return rec;
}

ActionDelta combine(const ActionDelta& a_b, const ActionDelta& a_r) {
  return clamp_action(action_sum(a_b, a_r));
}

bool demo_gate(int traj_length, std::multiset<int>& demo_episode_lengths) {
  if (demo_episode_lengths.empty()) return false;
  const size_t n = demo_episode_lengths.size();
  auto mid = demo_episode_lengths.begin();
  std::advance(mid, (n - 1) / 2);
  double median = static_cast<double>(*mid);
  if (n % 2 == 0) median = 0.5 * (median + static_cast<double>(*std::next(mid)));
  if (!(static_cast<double>(traj_length) < median)) return false;
  demo_episode_lengths.insert(traj_length);
  return true;
}

ReplayStore::ReplayStore(int demo_capacity_traj, int online_capacity)
    : demo_capacity_(demo_capacity_traj), online_capacity_(online_capacity) {
  if (demo_capacity_ < 1 || online_capacity_ < 1)
    throw std::invalid_argument("replay capacities must be positive");
}

void ReplayStore::add_demo_trajectory(std::vector<Transition> traj) {
  if (traj.empty()) throw std::invalid_argument("empty demo trajectory");
  demo_lengths_.insert(static_cast<int>(traj.size()));
  demo_trajs_.push_back(std::move(traj));
  insert_order_.push_back(next_order_++);
  while (static_cast<int>(demo_trajs_.size()) > demo_capacity_) {
    // Evict the longest trajectory, oldest first among equals.
    size_t victim = 0;
    for (size_t i = 1; i < demo_trajs_.size(); ++i) {
      const size_t li = demo_trajs_[i].size();
      const size_t lv = demo_trajs_[victim].size();
      if (li > lv || (li == lv && insert_order_[i] < insert_order_[victim]))
        victim = i;
    }
    demo_lengths_.erase(
        demo_lengths_.find(static_cast<int>(demo_trajs_[victim].size())));
    demo_trajs_.erase(demo_trajs_.begin() + static_cast<long>(victim));
    insert_order_.erase(insert_order_.begin() + static_cast<long>(victim));
  }
  rebuild_flat();
}

bool ReplayStore::try_admit(std::vector<Transition> traj) {
  if (traj.empty()) return false;
  std::multiset<int> probe = demo_lengths_;
  if (!demo_gate(static_cast<int>(traj.size()), probe)) return false;
  // add_demo_trajectory re-inserts the length, keeping the multiset the
  // single source of truth for both paths.
  add_demo_trajectory(std::move(traj));
  return true;
}

void ReplayStore::push_online(const Transition& t) {
  online_.push_back(t);
  while (static_cast<int>(online_.size()) > online_capacity_)
    online_.pop_front();
}

double ReplayStore::demo_median_len() const {
  if (demo_lengths_.empty()) return std::nan("");
  const size_t n = demo_lengths_.size();
  auto mid = demo_lengths_.begin();
  std::advance(mid, (n - 1) / 2);
  double median = static_cast<double>(*mid);
  if (n % 2 == 0) median = 0.5 * (median + static_cast<double>(*std::next(mid)));
  return median;
}

void ReplayStore::rebuild_flat() {
  demo_flat_.clear();
  for (const auto& traj : demo_trajs_)
    for (const auto& t : traj) demo_flat_.push_back(&t);
}

SampleBatch symmetric_sample(const ReplayStore& store, int batch_size,
                             Rng& rng) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw std::invalid_argument("batch size must be even and >= 2");
  const int nd = store.demo_transitions();
  const int no = store.online_size();
  if (nd == 0 && no == 0) throw std::logic_error("both replay buffers empty");

  SampleBatch batch;
  batch.items.reserve(static_cast<size_t>(batch_size));
  if (no == 0) {
    batch.demo_only = true;
    batch.n_demo = batch_size;
    for (int i = 0; i < batch_size; ++i)
      batch.items.push_back(
          &store.demo_at(static_cast<int>(rng.uniform_index(nd))));
    return batch;
  }
  if (nd == 0) {
    batch.n_online = batch_size;
    for (int i = 0; i < batch_size; ++i)
      batch.items.push_back(
          &store.online_at(static_cast<int>(rng.uniform_index(no))));
    return batch;
  }
  batch.n_demo = batch_size / 2;
  batch.n_online = batch_size / 2;
  for (int i = 0; i < batch.n_demo; ++i)
    batch.items.push_back(
        &store.demo_at(static_cast<int>(rng.uniform_index(nd))));
  for (int i = 0; i < batch.n_online; ++i)
    batch.items.push_back(
        &store.online_at(static_cast<int>(rng.uniform_index(no))));
  return batch;
}

double td_target(double reward, bool done, double gamma, double min_q_next,
                 double alpha_log_pi_next) {
  if (done) return reward;
  return reward + gamma * (min_q_next - alpha_log_pi_next);
}

ResidualVariant ResidualVariant::no_demo_update() {
  ResidualVariant v;
  v.admit_demos = false;
  return v;
}

ResidualVariant ResidualVariant::no_base_action() {
  ResidualVariant v;
  v.base_action_input = false;
  return v;
}

ResidualVariant ResidualVariant::state_based() {
  ResidualVariant v;
  v.use_images = false;
  return v;
}

ResidualVariant ResidualVariant::scratch() {
  ResidualVariant v;
  v.zero_base_action = true;
  return v;
}

void RlpdConfig::validate() const {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw std::invalid_argument("batch_size must be even and >= 2");
  if (utd_ratio < 1) throw std::invalid_argument("utd_ratio must be >= 1");
  if (gamma <= 0.0 || gamma > 1.0)
    throw std::invalid_argument("gamma must be in (0, 1]");
  if (tau <= 0.0 || tau > 1.0)
    throw std::invalid_argument("tau must be in (0, 1]");
  if (actor_lr <= 0.0 || critic_lr <= 0.0 || alpha_lr <= 0.0)
    throw std::invalid_argument("learning rates must be positive");
  if (demo_capacity < 1 || online_capacity < 1)
    throw std::invalid_argument("buffer capacities must be positive");
  if (max_env_steps < 0)
    throw std::invalid_argument("max_env_steps must be >= 0");
  if (actor_period < 1) throw std::invalid_argument("actor_period must be >= 1");
  if (eval_every < 1 || eval_episodes < 1)
    throw std::invalid_argument("evaluation cadence must be positive");
  if (enc_hidden < 1 || enc_feature < 1)
    throw std::invalid_argument("encoder sizes must be positive");
  if (hidden.empty()) throw std::invalid_argument("hidden layers required");
}

VectorXd residual_proprio_scale() {
  VectorXd s(ResidualObs::kProprioDim);
  // Pose in mm/deg, twist in mm/s and deg/s, wrench in force units of the
  // penalty model (contact_stiffness * mm). The divisors put typical contact
  // episodes within about [-1, 1] without clipping hard pushes.
  s << 1.0 / 50.0, 1.0 / 50.0, 1.0 / 180.0, 1.0 / 100.0, 1.0 / 100.0,
      1.0 / 180.0, 1.0 / 300.0, 1.0 / 300.0, 1.0 / 3000.0;
  return s;
}

namespace {

int actor_input_dim(const ResidualVariant& v, const RlpdConfig& cfg) {
  if (v.use_images)
    return 2 * cfg.enc_feature + ResidualObs::kProprioDim + kActDim;
  // proprio ++ noisy goal pose ++ base action
  return ResidualObs::kProprioDim + 3 + kActDim;
}

MlpSpec actor_spec(const ResidualVariant& v, const RlpdConfig& cfg) {
  MlpSpec spec;
  spec.layer_sizes.push_back(actor_input_dim(v, cfg));
  for (int h : cfg.hidden) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(2 * kActDim);
  spec.activation = Activation::kRelu;
  spec.layer_norm = true;
  return spec;
}

MlpSpec critic_spec(const ResidualVariant& v, const RlpdConfig& cfg) {
  MlpSpec spec;
  spec.layer_sizes.push_back(actor_input_dim(v, cfg) + kActDim);
  for (int h : cfg.hidden) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(1);
  spec.activation = Activation::kRelu;
  spec.layer_norm = true;
  return spec;
}

}  // namespace

ResidualPolicy::ResidualPolicy(const ResidualVariant& variant,
                               const RlpdConfig& cfg)
    : variant_(variant),
      actor_(actor_spec(variant, cfg), kActDim, /*state_dependent_std=*/true),
      input_dim_(actor_input_dim(variant, cfg)) {
  if (variant.use_images)
    encoder_.emplace(kEncPixels, cfg.enc_hidden, cfg.enc_feature);
}

void ResidualPolicy::init(Rng& rng, double log_std_bias) {
  if (encoder_) encoder_->init(rng);
  actor_.init(rng);
  actor_.init_head_zero(log_std_bias);
}

VectorXd ResidualPolicy::pooled_pixels(
    const std::array<uint8_t, Image::kPixels>& q) {
  constexpr int side = Image::kW / kEncPool;
  VectorXd out(kEncPixels);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      int sum = 0;
      for (int dr = 0; dr < kEncPool; ++dr)
        for (int dc = 0; dc < kEncPool; ++dc)
          sum += q[(kEncPool * r + dr) * Image::kW + kEncPool * c + dc];
      out[r * side + c] =
          static_cast<double>(sum) / (kEncPool * kEncPool * 255.0) - 0.5;
    }
  }
  return out;
}

VectorXd ResidualPolicy::tail_block(const ObsRecord& obs,
                                    const ActionDelta& a_b) const {
  static const VectorXd scale = residual_proprio_scale();
  VectorXd tail(tail_dim());
  tail[0] = obs.ee_pose.x * scale[0];
  tail[1] = obs.ee_pose.y * scale[1];
  tail[2] = obs.ee_pose.theta * scale[2];
  tail[3] = obs.ee_twist.vx * scale[3];
  tail[4] = obs.ee_twist.vy * scale[4];
  tail[5] = obs.ee_twist.omega * scale[5];
  tail[6] = obs.wrench.fx * scale[6];
  tail[7] = obs.wrench.fy * scale[7];
  tail[8] = obs.wrench.tau * scale[8];
  int k = ResidualObs::kProprioDim;
  if (!variant_.use_images) {
    tail[k++] = obs.goal_pose_noisy.x / 50.0;
    tail[k++] = obs.goal_pose_noisy.y / 50.0;
    tail[k++] = obs.goal_pose_noisy.theta / 180.0;
  }
  const bool mask = !variant_.base_action_input;
  tail[k++] = mask ? 0.0 : a_b.dx;
  tail[k++] = mask ? 0.0 : a_b.dy;
  tail[k++] = mask ? 0.0 : a_b.dtheta;
  return tail;
}

GaussianPolicy::Dist ResidualPolicy::forward_obs(const ObsRecord& obs,
                                                 const ActionDelta& a_b) const {
  MatrixXd in(input_dim_, 1);
  int row = 0;
  if (encoder_) {
    const MatrixXd feat =
        encoder_->forward_nograd(pooled_pixels(obs.front),
                                 pooled_pixels(obs.wrist));
    in.topRows(feat.rows()) = feat;
    row = static_cast<int>(feat.rows());
  }
  in.bottomRows(input_dim_ - row) = tail_block(obs, a_b);
  return actor_.forward_nograd(in);
}

ActionDelta stack_base_action(const PolicyStack& stack, const Simulator& sim) {
  if (stack.base == nullptr) return ActionDelta{};
  return base_policy_mean(*stack.base, sim.obs_base());
}

EpisodeOutcome run_episode(Simulator& sim, const PolicyStack& stack,
                           uint64_t episode_seed) {
  sim.reset(episode_seed);
  EpisodeOutcome out;
  for (;;) {
    const ActionDelta a_b = stack_base_action(stack, sim);
    ActionDelta a_r;
    if (stack.residual != nullptr) {
      const auto dist = stack.residual->forward_obs(capture_obs(sim), a_b);
      a_r = column_to_action(dist.mean, 0);
    }
    const StepResult res = sim.step(combine(a_b, a_r));
    ++out.steps;
    if (res.done) {
      out.success = res.success;
      return out;
    }
  }
}

DemoCollection collect_demos(const GaussianPolicy& base,
                             const DomainConfig& domain_real, int n_target,
                             uint64_t seed, double floor_rate,
                             int floor_window) {
  if (n_target < 1) throw std::invalid_argument("n_target must be >= 1");
  Rng master(seed);
  Rng env_rng = master.split(kStreamEnv);
  Rng noise_rng = master.split(kStreamAction);
  Simulator sim(domain_real);

  DemoCollection out;
  std::deque<bool> window;
  long window_successes = 0;

  while (static_cast<int>(out.trajectories.size()) < n_target) {
    sim.reset(env_rng.next_u64());
    std::vector<Transition> traj;
    bool success = false;

    ObsRecord obs = capture_obs(sim);
    MatrixXd base_in(BaseObs::kDim, 1);
    base_in.col(0) = base_obs_vector(sim.obs_base());
    GaussianPolicy::Dist dist = base.forward_nograd(base_in);
    for (;;) {
      const ActionDelta a_b = column_to_action(dist.mean, 0);
      ActionDelta a_r;
      for (int d = 0; d < kActDim; ++d) {
        const double sigma = std::exp(dist.log_std(d, 0));
        const double draw = noise_rng.normal(0.0, sigma);
        (d == 0 ? a_r.dx : d == 1 ? a_r.dy : a_r.dtheta) = draw;
        const double z = draw / sigma;
        out.z_sum[static_cast<size_t>(d)] += z;
        out.z_sq_sum[static_cast<size_t>(d)] += z * z;
      }
      ++out.z_count;

      const StepResult res = sim.step(combine(a_b, a_r));
      const ObsRecord next_obs = capture_obs(sim);
      base_in.col(0) = base_obs_vector(sim.obs_base());
      dist = base.forward_nograd(base_in);
      const ActionDelta next_ab = column_to_action(dist.mean, 0);

      traj.push_back(Transition{obs, a_b, a_r, res.reward, res.done, next_obs,
                                next_ab});
      obs = next_obs;
      if (res.done) {
        success = res.success;
        break;
      }
    }

    ++out.attempts;
    window.push_back(success);
    if (success) ++window_successes;
    if (static_cast<int>(window.size()) > floor_window) {
      if (window.front()) --window_successes;
      window.pop_front();
    }
    if (success) out.trajectories.push_back(std::move(traj));
    if (static_cast<int>(out.trajectories.size()) >= n_target) break;

    if (static_cast<int>(window.size()) >= floor_window &&
        static_cast<double>(window_successes) <
            floor_rate * static_cast<double>(floor_window)) {
      std::ostringstream msg;
      msg << "demo collection success rate "
          << static_cast<double>(window_successes) / floor_window
          << " over the last " << floor_window << " episodes is below the "
          << floor_rate << " floor (" << out.attempts << " attempts, "
          << out.trajectories.size() << " successes kept)";
      throw DemoFloorError(msg.str());
    }
  }
  return out;
}

namespace {

constexpr char kDemoMagic[9] = "RDRLDEMO";
constexpr uint32_t kDemoVersion = 1;

void write_pose(std::ofstream& os, const Pose2& p) {
  os.write(reinterpret_cast<const char*>(&p.x), sizeof(double));
  os.write(reinterpret_cast<const char*>(&p.y), sizeof(double));
  os.write(reinterpret_cast<const char*>(&p.theta), sizeof(double));
}

void write_obs(std::ofstream& os, const ObsRecord& o) {
  write_pose(os, o.ee_pose);
  os.write(reinterpret_cast<const char*>(&o.ee_twist), 3 * sizeof(double));
  os.write(reinterpret_cast<const char*>(&o.wrench), 3 * sizeof(double));
  write_pose(os, o.goal_pose_noisy);
  os.write(reinterpret_cast<const char*>(o.front.data()), Image::kPixels);
  os.write(reinterpret_cast<const char*>(o.wrist.data()), Image::kPixels);
}

void write_action(std::ofstream& os, const ActionDelta& a) {
  os.write(reinterpret_cast<const char*>(&a), 3 * sizeof(double));
}

void read_exact(std::ifstream& is, char* dst, std::streamsize n,
                const std::string& path) {
  is.read(dst, n);
  if (is.gcount() != n)
    throw std::runtime_error(path + ": truncated demo record");
}

void read_pose(std::ifstream& is, Pose2& p, const std::string& path) {
  read_exact(is, reinterpret_cast<char*>(&p.x), sizeof(double), path);
  read_exact(is, reinterpret_cast<char*>(&p.y), sizeof(double), path);
  read_exact(is, reinterpret_cast<char*>(&p.theta), sizeof(double), path);
}

void read_obs(std::ifstream& is, ObsRecord& o, const std::string& path) {
  read_pose(is, o.ee_pose, path);
  read_exact(is, reinterpret_cast<char*>(&o.ee_twist), 3 * sizeof(double),
             path);
  read_exact(is, reinterpret_cast<char*>(&o.wrench), 3 * sizeof(double), path);
  read_pose(is, o.goal_pose_noisy, path);
  read_exact(is, reinterpret_cast<char*>(o.front.data()), Image::kPixels,
             path);
  read_exact(is, reinterpret_cast<char*>(o.wrist.data()), Image::kPixels,
             path);
}

void read_action(std::ifstream& is, ActionDelta& a, const std::string& path) {
  read_exact(is, reinterpret_cast<char*>(&a), 3 * sizeof(double), path);
}

}  // namespace

void save_demos(const std::string& dir,
                const std::vector<std::vector<Transition>>& trajs) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < trajs.size(); ++i) {
    std::ostringstream name;
    name << dir << "/traj_" << std::setw(4) << std::setfill('0') << i
         << ".bin";
    std::ofstream os(name.str(), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + name.str());
    os.write(kDemoMagic, 8);
    os.write(reinterpret_cast<const char*>(&kDemoVersion),
             sizeof kDemoVersion);
    const uint32_t count = static_cast<uint32_t>(trajs[i].size());
    os.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (const Transition& t : trajs[i]) {
      write_obs(os, t.residual_obs);
      write_action(os, t.base_action);
      write_action(os, t.residual_action);
      os.write(reinterpret_cast<const char*>(&t.reward), sizeof(double));
      const uint8_t done = t.done ? 1 : 0;
      os.write(reinterpret_cast<const char*>(&done), 1);
      write_obs(os, t.next_residual_obs);
      write_action(os, t.next_base_action);
    }
    if (!os) throw std::runtime_error("short write on " + name.str());
  }
}

std::vector<std::vector<Transition>> load_demos(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("traj_", 0) == 0 && entry.path().extension() == ".bin")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error(dir + ": no demo trajectories found");

  std::vector<std::vector<Transition>> trajs;
  for (const std::string& path : files) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    char magic[8];
    read_exact(is, magic, 8, path);
    if (std::memcmp(magic, kDemoMagic, 8) != 0)
      throw std::runtime_error(path + ": not a demo trajectory file");
    uint32_t version = 0;
    read_exact(is, reinterpret_cast<char*>(&version), sizeof version, path);
    if (version != kDemoVersion) {
      std::ostringstream msg;
      msg << path << ": unsupported demo version " << version;
      throw std::runtime_error(msg.str());
    }
    uint32_t count = 0;
    read_exact(is, reinterpret_cast<char*>(&count), sizeof count, path);
    std::vector<Transition> traj(count);
    for (uint32_t i = 0; i < count; ++i) {
      Transition& t = traj[i];
      read_obs(is, t.residual_obs, path);
      read_action(is, t.base_action, path);
      read_action(is, t.residual_action, path);
      read_exact(is, reinterpret_cast<char*>(&t.reward), sizeof(double),
                 path);
      uint8_t done = 0;
      read_exact(is, reinterpret_cast<char*>(&done), 1, path);
      t.done = done != 0;
      read_obs(is, t.next_residual_obs, path);
      read_action(is, t.next_base_action, path);
    }
    trajs.push_back(std::move(traj));
  }
  return trajs;
}

std::vector<std::vector<Transition>> fold_base_into_residual(
    std::vector<std::vector<Transition>> trajs) {
  for (auto& traj : trajs) {
    for (Transition& t : traj) {
      t.residual_action = action_sum(t.base_action, t.residual_action);
      t.base_action = ActionDelta{};
      t.next_base_action = ActionDelta{};
    }
  }
  return trajs;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<ResidualMetricsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "env_step,eval_success,mean_cycle_time_s,demo_median_len\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.env_step << ',' << r.eval_success << ',';
    if (std::isfinite(r.mean_cycle_time_s)) os << r.mean_cycle_time_s;
    os << ',';
    if (std::isfinite(r.demo_median_len)) os << r.demo_median_len;
    os << '\n';
  }
  if (!os) throw std::runtime_error("short write on " + path);
}

ResidualLearner::ResidualLearner(const RlpdConfig& cfg,
                                 const ResidualVariant& variant, uint64_t seed)
    : cfg_(cfg),
      variant_(variant),
      policy_(variant, cfg),
      critics_(critic_spec(variant, cfg), 2),
      targets_(critic_spec(variant, cfg), 2),
      store_(cfg.demo_capacity, cfg.online_capacity),
      log_alpha_(1),
      actor_opt_(policy_.actor().num_params(), cfg.actor_lr),
      alpha_opt_(1, cfg.alpha_lr),
      update_rng_(Rng(seed).split(kStreamUpdate)) {
  cfg_.validate();
  Rng init_rng = Rng(seed).split(kStreamInit);
  policy_.init(init_rng, cfg_.init_log_std_bias);
  critics_.init(init_rng);
  targets_.polyak_from(critics_, 1.0);
  log_alpha_[0] = cfg_.init_log_alpha;
  critic_opts_.reserve(2);
  for (int i = 0; i < 2; ++i)
    critic_opts_.emplace_back(critics_.member(i).num_params(), cfg_.critic_lr);
  if (policy_.has_encoder()) {
    enc_front_opt_.emplace(policy_.encoder().front().num_params(),
                           cfg_.critic_lr);
    enc_wrist_opt_.emplace(policy_.encoder().wrist().num_params(),
                           cfg_.critic_lr);
  }
}

void ResidualLearner::seed_demos(
    const std::vector<std::vector<Transition>>& demos) {
  const auto ready = variant_.zero_base_action
                         ? fold_base_into_residual(demos)
                         : demos;
  for (const auto& traj : ready) store_.add_demo_trajectory(traj);
}

void ResidualLearner::pixel_matrices(const SampleBatch& batch, bool next,
                                     MatrixXd& front, MatrixXd& wrist) const {
  const int B = static_cast<int>(batch.items.size());
  front.resize(kEncPixels, B);
  wrist.resize(kEncPixels, B);
  for (int i = 0; i < B; ++i) {
    const ObsRecord& o = next ? batch.items[static_cast<size_t>(i)]->next_residual_obs
                              : batch.items[static_cast<size_t>(i)]->residual_obs;
    front.col(i) = ResidualPolicy::pooled_pixels(o.front);
    wrist.col(i) = ResidualPolicy::pooled_pixels(o.wrist);
  }
}

MatrixXd ResidualLearner::assemble_tail(const SampleBatch& batch,
                                        bool next) const {
  const int B = static_cast<int>(batch.items.size());
  MatrixXd tail(policy_.tail_dim(), B);
  for (int i = 0; i < B; ++i) {
    const Transition& t = *batch.items[static_cast<size_t>(i)];
    tail.col(i) = policy_.tail_block(next ? t.next_residual_obs : t.residual_obs,
                                     next ? t.next_base_action : t.base_action);
  }
  return tail;
}

RlpdLosses ResidualLearner::rlpd_update(bool update_actor) {
  const int B = cfg_.batch_size;
  GaussianPolicy& actor = policy_.actor();
  RlpdLosses losses;

  // Critic step.
  {
    const SampleBatch batch = symmetric_sample(store_, B, update_rng_);
    losses.demo_only_batch = batch.demo_only;

    MatrixXd actor_in_next;
    MatrixXd front, wrist;
    const MatrixXd tail_next = assemble_tail(batch, /*next=*/true);
    if (policy_.has_encoder()) {
      pixel_matrices(batch, /*next=*/true, front, wrist);
      const MatrixXd feat = policy_.encoder().forward_nograd(front, wrist);
      actor_in_next.resize(policy_.input_dim(), B);
      actor_in_next.topRows(feat.rows()) = feat;
      actor_in_next.bottomRows(tail_next.rows()) = tail_next;
    } else {
      actor_in_next = tail_next;
    }

    const GaussianPolicy::Dist dist_next = actor.forward_nograd(actor_in_next);
    const MatrixXd a_next = GaussianPolicy::sample(dist_next, update_rng_);
    const VectorXd log_pi_next = GaussianPolicy::log_prob(dist_next, a_next);

    MatrixXd critic_in_next(policy_.input_dim() + kActDim, B);
    critic_in_next.topRows(policy_.input_dim()) = actor_in_next;
    critic_in_next.bottomRows(kActDim) = a_next;
    const Eigen::RowVectorXd q_next = targets_.min_value(critic_in_next);

    const double alpha = std::exp(log_alpha_[0]);
    Eigen::RowVectorXd y(B);
    for (int i = 0; i < B; ++i) {
      const Transition& t = *batch.items[static_cast<size_t>(i)];
      y[i] = td_target(t.reward, t.done, cfg_.gamma, q_next[i],
                       alpha * log_pi_next[i]);
    }

    const MatrixXd tail_now = assemble_tail(batch, /*next=*/false);
    MatrixXd critic_in(policy_.input_dim() + kActDim, B);
    if (policy_.has_encoder()) {
      pixel_matrices(batch, /*next=*/false, front, wrist);
      const MatrixXd feat = policy_.encoder().forward(front, wrist);
      critic_in.topRows(feat.rows()) = feat;
      critic_in.middleRows(feat.rows(), tail_now.rows()) = tail_now;
    } else {
      critic_in.topRows(tail_now.rows()) = tail_now;
    }
    for (int i = 0; i < B; ++i) {
      const Transition& t = *batch.items[static_cast<size_t>(i)];
      critic_in(policy_.input_dim() + 0, i) = t.residual_action.dx;
      critic_in(policy_.input_dim() + 1, i) = t.residual_action.dy;
      critic_in(policy_.input_dim() + 2, i) = t.residual_action.dtheta;
    }

    critics_.zero_grad();
    if (policy_.has_encoder()) policy_.encoder().zero_grad();
    MatrixXd d_feat;
    double loss = 0.0;
    double q_mean = 0.0;
    for (int m = 0; m < 2; ++m) {
      const MatrixXd q = critics_.member(m).forward(critic_in);
      const Eigen::RowVectorXd err = q.row(0) - y;
      loss += err.squaredNorm() / B;
      q_mean += q.row(0).mean() / 2.0;
      const MatrixXd din = critics_.member(m).backward((2.0 / B) * err);
      if (policy_.has_encoder()) {
        if (d_feat.size() == 0)
          d_feat = din.topRows(policy_.encoder().feature_dim());
        else
          d_feat += din.topRows(policy_.encoder().feature_dim());
      }
    }
    losses.critic_loss = loss;
    losses.mean_q = q_mean;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "non-finite critic loss at update " << update_count_ << " (demo "
          << store_.demo_transitions() << ", online " << store_.online_size()
          << ", alpha " << alpha << ", target mean " << y.mean() << ")";
      throw std::runtime_error(msg.str());
    }

    for (int m = 0; m < 2; ++m)
      critic_opts_[static_cast<size_t>(m)].step(critics_.member(m).params(),
                                                critics_.member(m).grad());
    if (policy_.has_encoder()) {
      policy_.encoder().backward(d_feat);
      enc_front_opt_->step(policy_.encoder().front().params(),
                           policy_.encoder().front().grad());
      enc_wrist_opt_->step(policy_.encoder().wrist().params(),
                           policy_.encoder().wrist().grad());
    }
    targets_.polyak_from(critics_, cfg_.tau);
  }

  const double alpha = std::exp(log_alpha_[0]);
  losses.alpha = alpha;

  if (update_actor) {
    const SampleBatch batch = symmetric_sample(store_, B, update_rng_);

    MatrixXd actor_in;
    const MatrixXd tail = assemble_tail(batch, /*next=*/false);
    if (policy_.has_encoder()) {
      MatrixXd front, wrist;
      pixel_matrices(batch, /*next=*/false, front, wrist);
      // The encoder is trained by the critic loss alone; the actor consumes
      // its features as fixed inputs.
      const MatrixXd feat = policy_.encoder().forward_nograd(front, wrist);
      actor_in.resize(policy_.input_dim(), B);
      actor_in.topRows(feat.rows()) = feat;
      actor_in.bottomRows(tail.rows()) = tail;
    } else {
      actor_in = tail;
    }

    const GaussianPolicy::Dist dist = actor.forward(actor_in);
    const MatrixXd sigma = dist.log_std.array().exp().matrix();
    MatrixXd eps(kActDim, B);
    for (int i = 0; i < B; ++i)
      for (int d = 0; d < kActDim; ++d) eps(d, i) = update_rng_.normal();
    const MatrixXd a = dist.mean + sigma.cwiseProduct(eps);
    const VectorXd log_pi = GaussianPolicy::log_prob(dist, a);
    losses.mean_log_pi = log_pi.mean();

    MatrixXd critic_in(policy_.input_dim() + kActDim, B);
    critic_in.topRows(policy_.input_dim()) = actor_in;
    critic_in.bottomRows(kActDim) = a;
    const MatrixXd q0 = critics_.member(0).forward(critic_in);
    const MatrixXd q1 = critics_.member(1).forward(critic_in);

    // d/dq of -mean(min Q): only the argmin member sees each sample.
    MatrixXd dy0 = MatrixXd::Zero(1, B);
    MatrixXd dy1 = MatrixXd::Zero(1, B);
    double min_q_mean = 0.0;
    for (int i = 0; i < B; ++i) {
      const double lo = std::min(q0(0, i), q1(0, i));
      min_q_mean += lo / B;
      (q0(0, i) <= q1(0, i) ? dy0 : dy1)(0, i) = -1.0 / B;
    }
    losses.actor_loss = alpha * losses.mean_log_pi - min_q_mean;
    if (!std::isfinite(losses.actor_loss)) {
      std::ostringstream msg;
      msg << "non-finite actor loss at update " << update_count_ << " (demo "
          << store_.demo_transitions() << ", online " << store_.online_size()
          << ", alpha " << alpha << ", mean log pi " << losses.mean_log_pi
          << ")";
      throw std::runtime_error(msg.str());
    }

    const MatrixXd din =
        critics_.member(0).backward(dy0, /*accumulate_param_grads=*/false) +
        critics_.member(1).backward(dy1, /*accumulate_param_grads=*/false);
    const MatrixXd dq_da = din.bottomRows(kActDim);

    // Reparameterized gradients of mean(alpha*log pi - min Q): the entropy
    // term cancels in the mean direction and contributes a constant -alpha/B
    // per log_std entry.
    const MatrixXd d_mean = dq_da;
    MatrixXd d_log_std = dq_da.cwiseProduct(sigma.cwiseProduct(eps));
    d_log_std.array() -= alpha / B;

    actor.zero_grad();
    actor.backward(d_mean, d_log_std);
    VectorXd params = actor.params_flat();
    actor_opt_.step(params, actor.grad_flat());
    actor.set_params_flat(params);

    const double g_alpha = -(losses.mean_log_pi + cfg_.entropy_target);
    VectorXd g(1);
    g[0] = g_alpha;
    alpha_opt_.step(log_alpha_, g);
    // Keeps the entropy bonus within the sparse-return scale even if the
    // temperature loss transiently runs away.
    log_alpha_[0] = std::clamp(log_alpha_[0], -20.0, 2.0);
    losses.alpha = std::exp(log_alpha_[0]);
  }

  ++update_count_;
  return losses;
}

ResidualMetricsRow ResidualLearner::evaluate(const GaussianPolicy* base,
                                             const DomainConfig& domain,
                                             long env_step,
                                             uint64_t eval_seed) {
  PolicyStack stack{base, &policy_};
  Simulator sim(domain);
  Rng rng(eval_seed);
  int successes = 0;
  long success_steps = 0;
  for (int e = 0; e < cfg_.eval_episodes; ++e) {
    const EpisodeOutcome out = run_episode(sim, stack, rng.next_u64());
    if (out.success) {
      ++successes;
      success_steps += out.steps;
    }
  }
  ResidualMetricsRow row;
  row.env_step = env_step;
  row.eval_success = static_cast<double>(successes) / cfg_.eval_episodes;
  row.mean_cycle_time_s =
      successes > 0 ? domain.control_dt * static_cast<double>(success_steps) /
                          successes
                    : std::nan("");
  row.demo_median_len = store_.demo_median_len();
  return row;
}

Checkpoint ResidualLearner::make_checkpoint() const {
  Checkpoint ck;
  ck.add("actor_trunk", policy_.actor().params_flat());
  if (policy_.has_encoder()) {
    ck.add("enc_front", policy_.encoder().front().params());
    ck.add("enc_wrist", policy_.encoder().wrist().params());
  }
  for (int m = 0; m < 2; ++m) {
    ck.add("critic_" + std::to_string(m), critics_.member(m).params());
    ck.add("target_" + std::to_string(m), targets_.member(m).params());
  }
  ck.add("log_alpha", log_alpha_);
  ck.meta["kind"] = "residual_policy";
  ck.meta["act_dim"] = kActDim;
  ck.meta["enc_hidden"] = cfg_.enc_hidden;
  ck.meta["enc_feature"] = cfg_.enc_feature;
  ck.meta["hidden"] = cfg_.hidden;
  ck.meta["input_dim"] = policy_.input_dim();
  ck.meta["variant"] = {{"use_images", variant_.use_images},
                        {"base_action_input", variant_.base_action_input},
                        {"zero_base_action", variant_.zero_base_action},
                        {"admit_demos", variant_.admit_demos}};
  return ck;
}

Checkpoint residual_checkpoint(const ResidualLearner& learner) {
  return learner.make_checkpoint();
}

ResidualPolicy residual_policy_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "residual_policy")
    throw std::invalid_argument("checkpoint does not hold a residual policy");
  RlpdConfig cfg;
  cfg.enc_hidden = ck.meta.at("enc_hidden").get<int>();
  cfg.enc_feature = ck.meta.at("enc_feature").get<int>();
  cfg.hidden = ck.meta.at("hidden").get<std::vector<int>>();
  const auto& v = ck.meta.at("variant");
  ResidualVariant variant;
  variant.use_images = v.at("use_images").get<bool>();
  variant.base_action_input = v.at("base_action_input").get<bool>();
  variant.zero_base_action = v.at("zero_base_action").get<bool>();
  variant.admit_demos = v.at("admit_demos").get<bool>();

  ResidualPolicy policy(variant, cfg);
  policy.actor().set_params_flat(ck.get("actor_trunk"));
  if (variant.use_images) {
    auto load_view = [&](Mlp& view, const std::string& name) {
      const VectorXd& p = ck.get(name);
      if (p.size() != view.num_params())
        throw std::invalid_argument("checkpoint section " + name +
                                    " has wrong size");
      view.params() = p;
    };
    load_view(policy.encoder().front(), "enc_front");
    load_view(policy.encoder().wrist(), "enc_wrist");
  }
  return policy;
}

ResidualTrainResult train_residual(const GaussianPolicy* base_policy,
                                   const DomainConfig& domain_real,
                                   const std::vector<std::vector<Transition>>& demos,
                                   const RlpdConfig& cfg, uint64_t seed,
                                   const ResidualVariant& variant) {
  cfg.validate();
  if (demos.empty())
    throw std::invalid_argument("residual training needs demo trajectories");
  if (base_policy == nullptr && !variant.zero_base_action)
    throw std::invalid_argument("base policy required unless zero_base_action");
  const GaussianPolicy* act_base =
      variant.zero_base_action ? nullptr : base_policy;

  ResidualLearner learner(cfg, variant, seed);
  learner.seed_demos(demos);

  ResidualTrainResult out;
  if (cfg.max_env_steps == 0) {
    out.checkpoint = learner.make_checkpoint();
    out.checkpoint.meta["env_steps"] = 0;
    out.checkpoint.meta["seed"] = seed;
    return out;
  }

  Rng master(seed);
  Rng env_rng = master.split(kStreamEnv);
  Rng act_rng = master.split(kStreamAction);
  Rng eval_rng = master.split(kStreamEval);

  Simulator sim(domain_real);
  std::vector<Transition> episode;
  bool need_reset = true;
  ObsRecord obs;
  ActionDelta a_b;

  for (long step = 1; step <= cfg.max_env_steps; ++step) {
    if (need_reset) {
      sim.reset(env_rng.next_u64());
      episode.clear();
      obs = capture_obs(sim);
      a_b = act_base ? base_policy_mean(*act_base, sim.obs_base())
                     : ActionDelta{};
      need_reset = false;
    }

    const GaussianPolicy::Dist dist = learner.policy().forward_obs(obs, a_b);
    const MatrixXd a_r_col = GaussianPolicy::sample(dist, act_rng);
    const ActionDelta a_r = column_to_action(a_r_col, 0);

    const StepResult res = sim.step(combine(a_b, a_r));
    const ObsRecord next_obs = capture_obs(sim);
    const ActionDelta next_ab = act_base
                                    ? base_policy_mean(*act_base, sim.obs_base())
                                    : ActionDelta{};

    const Transition t{obs, a_b, a_r, res.reward, res.done, next_obs, next_ab};
    learner.store().push_online(t);
    episode.push_back(t);
    obs = next_obs;
    a_b = next_ab;

    if (res.done) {
      if (res.success && variant.admit_demos &&
          learner.store().try_admit(episode))
        ++out.demos_admitted;
      need_reset = true;
    }

    const bool actor_now = (step % cfg.actor_period == 0);
    for (int u = 0; u < cfg.utd_ratio; ++u)
      learner.rlpd_update(actor_now && u + 1 == cfg.utd_ratio);

    if (step % cfg.eval_every == 0 || step == cfg.max_env_steps) {
      out.metrics.push_back(
          learner.evaluate(act_base, domain_real, step, eval_rng.next_u64()));
    }
  }

  out.env_steps = cfg.max_env_steps;
  out.final_eval_success = out.metrics.back().eval_success;
  out.final_cycle_time_s = out.metrics.back().mean_cycle_time_s;
  out.checkpoint = learner.make_checkpoint();
  out.checkpoint.meta["env_steps"] = out.env_steps;
  out.checkpoint.meta["seed"] = seed;
  out.checkpoint.meta["eval_success"] = out.final_eval_success;
  out.checkpoint.meta["demos_admitted"] = out.demos_admitted;
  return out;
}

}  // namespace residrl
