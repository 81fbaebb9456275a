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

#include "residrl/eval_harness.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace residrl {
namespace {

namespace fs = std::filesystem;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex16(uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << v;
  return os.str();
}

// Matches the metrics-CSV convention: default stream formatting, NaN as an
// empty cell.
std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << v;
  return os.str();
}

double mean_ignoring_nan(const std::vector<double>& v) {
  double sum = 0.0;
  int n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  return n > 0 ? sum / n : kNaN;
}

ActionDelta mean_action(const GaussianPolicy::Dist& dist) {
  return ActionDelta{dist.mean(0, 0), dist.mean(1, 0), dist.mean(2, 0)};
}

bool wrench_nonzero(const Wrench2& w) {
  return w.fx != 0.0 || w.fy != 0.0 || w.tau != 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Evaluation reports

double cycle_time_s(int steps, const DomainConfig& domain) {
  return steps * domain.control_dt;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["n_episodes"] = n_episodes;
  j["success_rate"] = success_rate;
  if (!std::isnan(mean_cycle_time_s)) j["mean_cycle_time_s"] = mean_cycle_time_s;
  j["episodes"] = nlohmann::json::array();
  for (const EvalEpisode& e : episodes) {
    nlohmann::json je;
    je["episode_seed"] = e.episode_seed;
    je["success"] = e.success;
    je["steps"] = e.steps;
    if (!std::isnan(e.cycle_time_s)) je["cycle_time_s"] = e.cycle_time_s;
    j["episodes"].push_back(je);
  }
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.n_episodes = j.at("n_episodes").get<int>();
  r.success_rate = j.at("success_rate").get<double>();
  r.mean_cycle_time_s = j.value("mean_cycle_time_s", kNaN);
  for (const nlohmann::json& je : j.at("episodes")) {
    EvalEpisode e;
    e.episode_seed = je.at("episode_seed").get<uint64_t>();
    e.success = je.at("success").get<bool>();
    e.steps = je.at("steps").get<int>();
    e.cycle_time_s = je.value("cycle_time_s", kNaN);
    r.episodes.push_back(e);
  }
  return r;
}

EvalReport evaluate(const PolicyStack& stack, const DomainConfig& domain,
                    int n_episodes, uint64_t seed) {
  if (n_episodes < 1) throw std::invalid_argument("n_episodes must be >= 1");
  Simulator sim(domain);
  Rng rng(seed);
  EvalReport report;
  report.n_episodes = n_episodes;
  int successes = 0;
  double cycle_sum = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    EvalEpisode ep;
    ep.episode_seed = rng.next_u64();
    const EpisodeOutcome out = run_episode(sim, stack, ep.episode_seed);
    ep.success = out.success;
    ep.steps = out.steps;
    ep.cycle_time_s = out.success ? cycle_time_s(out.steps, domain) : kNaN;
    if (out.success) {
      ++successes;
      cycle_sum += ep.cycle_time_s;
    }
    report.episodes.push_back(ep);
  }
  report.success_rate = static_cast<double>(successes) / n_episodes;
  report.mean_cycle_time_s = successes > 0 ? cycle_sum / successes : kNaN;
  return report;
}

// ---------------------------------------------------------------------------
// Robustness grid

DomainConfig displaced_domain(const DomainConfig& domain, double dx_mm,
                              double dy_mm) {
  DomainConfig d = domain;
  d.socket_pose_true.x += dx_mm;
  d.socket_pose_true.y += dy_mm;
  return d;
}

nlohmann::json RobustnessGrid::to_json() const {
  nlohmann::json j;
  j["offsets_mm"] = nlohmann::json::array();
  j["cells"] = nlohmann::json::array();
  for (const GridCell& c : cells) {
    j["offsets_mm"].push_back({c.offset_x_mm, c.offset_y_mm});
    nlohmann::json jc;
    jc["offset_mm"] = {c.offset_x_mm, c.offset_y_mm};
    jc["report"] = c.report.to_json();
    j["cells"].push_back(jc);
  }
  j["mean_success_all"] = mean_success_all;
  j["mean_success_displaced"] = mean_success_displaced;
  return j;
}

RobustnessGrid robustness_sweep(const PolicyStack& stack,
                                const DomainConfig& domain, int n_episodes,
                                uint64_t seed) {
  RobustnessGrid grid;
  double sum_all = 0.0;
  double sum_displaced = 0.0;
  for (size_t i = 0; i < kGridOffsetsMm.size(); ++i) {
    const double dx = kGridOffsetsMm[i][0];
    const double dy = kGridOffsetsMm[i][1];
    GridCell& cell = grid.cells[i];
    cell.offset_x_mm = dx;
    cell.offset_y_mm = dy;
    cell.report = evaluate(stack, displaced_domain(domain, dx, dy), n_episodes,
                           seed);
    sum_all += cell.report.success_rate;
    if (i > 0) sum_displaced += cell.report.success_rate;
  }
  grid.mean_success_all = sum_all / kGridOffsetsMm.size();
  grid.mean_success_displaced = sum_displaced / (kGridOffsetsMm.size() - 1);
  return grid;
}

// ---------------------------------------------------------------------------
// Artifact cache

namespace {

constexpr int kCacheSchema = 1;

void write_stamp(const std::string& root, uint64_t fingerprint) {
  nlohmann::json j;
  j["schema"] = kCacheSchema;
  j["fingerprint"] = hex16(fingerprint);
  write_json(root + "/stamp.json", j);
}

bool stamp_matches(const std::string& root, uint64_t fingerprint) {
  std::ifstream in(root + "/stamp.json");
  if (!in) return false;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error&) {
    return false;
  }
  return j.value("schema", 0) == kCacheSchema &&
         j.value("fingerprint", std::string()) == hex16(fingerprint);
}

}  // namespace

ExperimentCache::ExperimentCache(std::string root, uint64_t config_fingerprint)
    : root_(std::move(root)) {
  if (root_.empty()) return;
  if (fs::exists(root_) && !stamp_matches(root_, config_fingerprint)) {
    fs::remove_all(root_);
  }
  if (!fs::exists(root_)) {
    fs::create_directories(root_);
    write_stamp(root_, config_fingerprint);
  }
}

Checkpoint ExperimentCache::checkpoint(const std::string& key,
                                       const std::function<Checkpoint()>& make) {
  if (root_.empty()) return make();
  const std::string path = root_ + "/" + key + ".ck";
  if (fs::exists(path)) return Checkpoint::load(path);
  Checkpoint ck = make();
  const std::string tmp = path + ".tmp";
  ck.save(tmp);
  fs::rename(tmp, path);
  return ck;
}

DemoCollection ExperimentCache::demo_set(
    const std::string& key, const std::function<DemoCollection()>& make) {
  if (root_.empty()) return make();
  const std::string dir = root_ + "/" + key;
  const std::string meta_path = dir + "/manifest.json";
  if (fs::exists(meta_path)) {
    DemoCollection c;
    c.trajectories = load_demos(dir);
    std::ifstream in(meta_path);
    nlohmann::json j;
    in >> j;
    c.attempts = j.at("attempts").get<long>();
    c.z_count = j.at("z_count").get<long>();
    for (int d = 0; d < 3; ++d) {
      c.z_sum[d] = j.at("z_sum")[d].get<double>();
      c.z_sq_sum[d] = j.at("z_sq_sum")[d].get<double>();
    }
    return c;
  }
  DemoCollection c = make();
  const std::string tmp = dir + ".tmp";
  fs::remove_all(tmp);
  save_demos(tmp, c.trajectories);
  nlohmann::json j;
  j["attempts"] = c.attempts;
  j["z_count"] = c.z_count;
  j["z_sum"] = c.z_sum;
  j["z_sq_sum"] = c.z_sq_sum;
  write_json(tmp + "/manifest.json", j);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
  return c;
}

uint64_t config_fingerprint(const DomainConfig& nominal,
                            const DomainConfig& real, const PpoConfig& ppo,
                            const RlpdConfig& rlpd) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << nominal.to_text() << "\n--\n" << real.to_text() << "\n--\n";
  os << ppo.n_envs << ' ' << ppo.rollout_len << ' ' << ppo.clip_ratio << ' '
     << ppo.gamma << ' ' << ppo.gae_lambda << ' ' << ppo.epochs << ' '
     << ppo.minibatch_size << ' ' << ppo.lr << ' ' << ppo.entropy_coef << ' '
     << ppo.value_coef << ' ' << ppo.total_env_steps << ' ';
  for (int h : ppo.hidden) os << h << ',';
  os << ' ' << ppo.init_log_std << ' ' << ppo.socket_jitter_mm << ' '
     << ppo.socket_jitter_deg << ' ' << ppo.eval_every_iters << ' '
     << ppo.eval_episodes << ' ' << ppo.early_stop_success;
  os << "\n--\n";
  os << rlpd.batch_size << ' ' << rlpd.utd_ratio << ' ' << rlpd.gamma << ' '
     << rlpd.tau << ' ' << rlpd.entropy_target << ' ' << rlpd.actor_lr << ' '
     << rlpd.critic_lr << ' ' << rlpd.alpha_lr << ' ' << rlpd.demo_capacity
     << ' ' << rlpd.online_capacity << ' ' << rlpd.max_env_steps << ' '
     << rlpd.actor_period << ' ' << rlpd.eval_every << ' '
     << rlpd.eval_episodes << ' ' << rlpd.enc_hidden << ' '
     << rlpd.enc_feature << ' ';
  for (int h : rlpd.hidden) os << h << ',';
  os << ' ' << rlpd.init_log_std_bias << ' ' << rlpd.init_log_alpha;
  return fnv1a64(os.str());
}

ResidualVariant variant_by_name(const std::string& name) {
  if (name == "full") return ResidualVariant::full();
  if (name == "no-demo-update") return ResidualVariant::no_demo_update();
  if (name == "no-base-action-input") return ResidualVariant::no_base_action();
  if (name == "state-based") return ResidualVariant::state_based();
  if (name == "scratch-rl") return ResidualVariant::scratch();
  throw std::invalid_argument("unknown residual variant: " + name);
}

// ---------------------------------------------------------------------------
// Experiment pipeline

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

ExperimentPipeline::ExperimentPipeline(DomainConfig nominal, DomainConfig real,
                                       PpoConfig ppo, RlpdConfig rlpd,
                                       ExperimentCache* cache)
    : nominal_(std::move(nominal)),
      real_(std::move(real)),
      ppo_(std::move(ppo)),
      rlpd_(std::move(rlpd)),
      cache_(cache) {}

Checkpoint ExperimentPipeline::base(uint64_t seed) {
  auto make = [&]() {
    const auto t0 = std::chrono::steady_clock::now();
    PretrainResult result = pretrain(ppo_, nominal_, seed);
    if (!result.reached_threshold) {
      throw std::runtime_error(
          "base pretraining missed its success threshold (seed " +
          std::to_string(seed) + ", final " +
          std::to_string(result.final_eval_success) + ")");
    }
    Checkpoint ck = result.checkpoint;
    ck.meta["train_seconds"] = seconds_since(t0);
    ck.meta["final_eval_success"] = result.final_eval_success;
    ck.meta["env_steps"] = result.env_steps;
    ck.meta["seed"] = seed;
    return ck;
  };
  const std::string key = "base_s" + std::to_string(seed);
  return cache_ ? cache_->checkpoint(key, make) : make();
}

GaussianPolicy ExperimentPipeline::base_policy(uint64_t seed) {
  return base_policy_from_checkpoint(base(seed));
}

DemoCollection ExperimentPipeline::demos_on(const DomainConfig& domain,
                                            const std::string& key_prefix,
                                            uint64_t seed, int n_target) {
  auto make = [&]() {
    const GaussianPolicy base_pol = base_policy(seed);
    const uint64_t demo_seed = Rng(seed).split(kDemoSeedStream).next_u64();
    return collect_demos(base_pol, domain, n_target, demo_seed);
  };
  std::string key = key_prefix + "_s" + std::to_string(seed) + "_n" +
                    std::to_string(n_target);
  // Artifacts for a domain other than the default real one carry the domain
  // in the key; the cache fingerprint only covers the pipeline's own configs.
  if (domain.to_text() != real_.to_text()) {
    key += "_" + hex16(fnv1a64(domain.to_text())).substr(8);
  }
  return cache_ ? cache_->demo_set(key, make) : make();
}

DemoCollection ExperimentPipeline::demos(uint64_t seed) {
  return demos_on(real_, "demos", seed, n_demos);
}

Checkpoint ExperimentPipeline::residual_on(const DomainConfig& domain,
                                           const std::string& label,
                                           const ResidualVariant& variant,
                                           uint64_t seed) {
  auto make = [&]() {
    const DemoCollection demo_set = demos_on(domain, "demos", seed, n_demos);
    const GaussianPolicy base_pol = base_policy(seed);
    const GaussianPolicy* base_ptr =
        variant.zero_base_action ? nullptr : &base_pol;
    const uint64_t train_seed = Rng(seed).split(kTrainSeedStream).next_u64();
    const auto t0 = std::chrono::steady_clock::now();
    ResidualTrainResult result = train_residual(
        base_ptr, domain, demo_set.trajectories, rlpd_, train_seed, variant);
    Checkpoint ck = result.checkpoint;
    ck.meta["train_seconds"] = seconds_since(t0);
    ck.meta["label"] = label;
    return ck;
  };
  std::string key = label + "_s" + std::to_string(seed);
  if (domain.to_text() != real_.to_text()) {
    key += "_" + hex16(fnv1a64(domain.to_text())).substr(8);
  }
  return cache_ ? cache_->checkpoint(key, make) : make();
}

Checkpoint ExperimentPipeline::residual(const std::string& label,
                                        const ResidualVariant& variant,
                                        uint64_t seed) {
  return residual_on(real_, label, variant, seed);
}

// ---------------------------------------------------------------------------
// Ablation table

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const AblationRow& r : rows) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("no ablation row named " + name);
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json j;
  j["seeds"] = seeds;
  j["rows"] = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    nlohmann::json jr;
    jr["name"] = r.name;
    jr["success_per_seed"] = r.success_per_seed;
    // NaN has no JSON representation; store missing cycle times as null
    // rather than relying on the serializer's lossy NaN handling.
    jr["cycle_per_seed"] = nlohmann::json::array();
    for (double c : r.cycle_per_seed) {
      if (std::isnan(c)) {
        jr["cycle_per_seed"].push_back(nullptr);
      } else {
        jr["cycle_per_seed"].push_back(c);
      }
    }
    jr["mean_success"] = r.mean_success;
    if (std::isnan(r.mean_cycle_time_s)) {
      jr["mean_cycle_time_s"] = nullptr;
    } else {
      jr["mean_cycle_time_s"] = r.mean_cycle_time_s;
    }
    j["rows"].push_back(jr);
  }
  return j;
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "variant,seed,success_rate,mean_cycle_time_s\n";
  for (const AblationRow& r : rows) {
    for (size_t i = 0; i < seeds.size(); ++i) {
      os << r.name << ',' << seeds[i] << ',' << csv_num(r.success_per_seed[i])
         << ',' << csv_num(r.cycle_per_seed[i]) << '\n';
    }
    os << r.name << ",mean," << csv_num(r.mean_success) << ','
       << csv_num(r.mean_cycle_time_s) << '\n';
  }
  return os.str();
}

AblationTable run_ablations(ExperimentPipeline& pipe,
                            const std::vector<uint64_t>& seeds,
                            int eval_episodes, uint64_t eval_seed) {
  if (seeds.empty()) throw std::invalid_argument("seeds must be nonempty");
  struct VariantRow {
    std::string name;
    bool trained;  // false for the base-only row
    ResidualVariant variant;
  };
  const std::vector<VariantRow> defs = {
      {"full", true, ResidualVariant::full()},
      {"no-demo-update", true, ResidualVariant::no_demo_update()},
      {"no-base-action-input", true, ResidualVariant::no_base_action()},
      {"base-only", false, ResidualVariant::full()},
      {"scratch-rl", true, ResidualVariant::scratch()},
  };

  AblationTable table;
  table.seeds = seeds;
  for (const VariantRow& def : defs) {
    AblationRow row;
    row.name = def.name;
    row.success_per_seed.resize(seeds.size(), kNaN);
    row.cycle_per_seed.resize(seeds.size(), kNaN);
    table.rows.push_back(row);
  }

  for (size_t si = 0; si < seeds.size(); ++si) {
    const uint64_t seed = seeds[si];
    const GaussianPolicy base_pol = pipe.base_policy(seed);
    // One evaluation episode stream per seed, shared by every row.
    const uint64_t seed_eval = Rng(eval_seed).split(seed).next_u64();
    for (size_t ri = 0; ri < defs.size(); ++ri) {
      const VariantRow& def = defs[ri];
      EvalReport report;
      if (!def.trained) {
        report = evaluate(PolicyStack{&base_pol, nullptr}, pipe.real(),
                          eval_episodes, seed_eval);
      } else {
        const Checkpoint ck = pipe.residual(def.name, def.variant, seed);
        const ResidualPolicy residual = residual_policy_from_checkpoint(ck);
        const GaussianPolicy* base_ptr =
            def.variant.zero_base_action ? nullptr : &base_pol;
        report = evaluate(PolicyStack{base_ptr, &residual}, pipe.real(),
                          eval_episodes, seed_eval);
      }
      table.rows[ri].success_per_seed[si] = report.success_rate;
      table.rows[ri].cycle_per_seed[si] = report.mean_cycle_time_s;
    }
  }

  for (AblationRow& row : table.rows) {
    row.mean_success = mean_ignoring_nan(row.success_per_seed);
    row.mean_cycle_time_s = mean_ignoring_nan(row.cycle_per_seed);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Transfer scenario

double ContactYawStat::agreement() const {
  return qualifying > 0 ? static_cast<double>(correct) / qualifying : kNaN;
}

ContactYawStat yaw_sign_stat(const PolicyStack& stack,
                             const DomainConfig& domain,
                             const std::vector<uint64_t>& episode_seeds,
                             double min_err_deg) {
  ContactYawStat stat;
  Simulator sim(domain);
  for (uint64_t episode_seed : episode_seeds) {
    sim.reset(episode_seed);
    bool contact_seen = false;
    bool recorded = false;
    for (;;) {
      const ActionDelta a_b = stack_base_action(stack, sim);
      ActionDelta a_r;
      if (stack.residual != nullptr) {
        a_r = mean_action(stack.residual->forward_obs(capture_obs(sim), a_b));
      }
      if (contact_seen && !recorded) {
        // First action whose observation contains the contact wrench. The
        // yaw error is measured against the true goal at that same moment.
        const double err = wrap_deg(sim.state().ee_pose.theta -
                                    sim.state().goal_pose_true.theta);
        recorded = true;
        if (std::fabs(err) >= min_err_deg) {
          ++stat.qualifying;
          if (a_r.dtheta * err < 0.0) ++stat.correct;
          stat.samples.push_back({err, a_r.dtheta});
        }
      }
      const StepResult res = sim.step(combine(a_b, a_r));
      if (!contact_seen && wrench_nonzero(sim.state().contact_wrench)) {
        contact_seen = true;
      }
      if (res.done) break;
    }
  }
  return stat;
}

nlohmann::json TransferReport::to_json() const {
  nlohmann::json j;
  j["zero_shot"] = zero_shot.to_json();
  j["post_residual"] = post_residual.to_json();
  nlohmann::json jy;
  jy["qualifying"] = yaw_stat.qualifying;
  jy["correct"] = yaw_stat.correct;
  if (!std::isnan(yaw_stat.agreement())) jy["agreement"] = yaw_stat.agreement();
  jy["samples"] = yaw_stat.samples;
  j["yaw_stat"] = jy;
  return j;
}

TransferReport transfer_scenario(ExperimentPipeline& pipe,
                                 const DomainConfig& transfer_domain,
                                 uint64_t seed, int eval_episodes,
                                 uint64_t eval_seed) {
  TransferReport report;
  const GaussianPolicy base_pol = pipe.base_policy(seed);
  report.zero_shot = evaluate(PolicyStack{&base_pol, nullptr}, transfer_domain,
                              eval_episodes, eval_seed);

  const Checkpoint ck = pipe.residual_on(transfer_domain, "transfer-full",
                                         ResidualVariant::full(), seed);
  const ResidualPolicy residual = residual_policy_from_checkpoint(ck);
  const PolicyStack stack{&base_pol, &residual};
  report.post_residual = evaluate(stack, transfer_domain, eval_episodes,
                                  eval_seed);

  std::vector<uint64_t> episode_seeds;
  for (const EvalEpisode& e : report.post_residual.episodes) {
    episode_seeds.push_back(e.episode_seed);
  }
  report.yaw_stat = yaw_sign_stat(stack, transfer_domain, episode_seeds, 0.5);
  return report;
}

// ---------------------------------------------------------------------------
// Run directories and report files

std::string output_root() {
  const char* env = std::getenv("RESIDRL_OUT");
  return (env != nullptr && *env != '\0') ? env : "out";
}

std::string make_run_dir(const std::string& root, const std::string& name,
                         bool force) {
  const fs::path dir = fs::path(root) / name;
  if (fs::exists(dir)) {
    if (!force) {
      throw OutputExistsError("run directory already exists: " + dir.string() +
                              " (pass --force to replace)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir.string();
}

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace residrl
