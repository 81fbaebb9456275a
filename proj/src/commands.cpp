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

#include "residrl/commands.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "residrl/eval_harness.hpp"
#include "residrl/experiment_config.hpp"
#include "residrl/kv_config.hpp"

namespace residrl {

namespace fs = std::filesystem;

namespace {

std::string hex16(uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string fingerprint_hex(const ExperimentConfig& cfg) {
  return hex16(config_fingerprint(cfg.sim_domain, cfg.real_domain, cfg.ppo,
                                  cfg.rlpd));
}

/// Completion marker: written last, and the only artifact carrying wall time.
void write_run_info(const std::string& dir, const CommandArgs& args,
                    const ExperimentConfig& cfg, nlohmann::json extra) {
  nlohmann::json j;
  j["command"] = args.command;
  j["config"] = args.config_path;
  j["config_fingerprint"] = fingerprint_hex(cfg);
  j["timestamp"] = timestamp_utc();
  for (auto& [key, value] : extra.items()) j[key] = value;
  write_json(dir + "/run_info.json", j);
}

const DomainConfig& domain_by_name(const ExperimentConfig& cfg,
                                   const std::string& name) {
  if (name == "real") return cfg.real_domain;
  if (name == "sim") return cfg.sim_domain;
  if (name == "transfer") return cfg.transfer_domain;
  throw std::invalid_argument("unknown domain name: " + name +
                              " (expected real, sim, or transfer)");
}

Checkpoint load_artifact(const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifactError(path);
  return Checkpoint::load(path);
}

struct LoadedStack {
  std::optional<GaussianPolicy> base;
  std::optional<ResidualPolicy> residual;

  PolicyStack stack() const {
    return PolicyStack{base ? &*base : nullptr,
                       residual ? &*residual : nullptr};
  }
};

/// Assembles the deployable policy pair for one named variant. "base-only"
/// skips the residual; a zero-base residual variant skips the base.
LoadedStack load_stack(const std::string& out_root, const std::string& variant,
                       uint64_t seed) {
  LoadedStack ls;
  if (variant == "base-only") {
    ls.base = base_policy_from_checkpoint(
        load_artifact(base_ckpt_path(out_root, seed)));
    return ls;
  }
  const Checkpoint ck =
      load_artifact(residual_ckpt_path(out_root, variant, seed));
  ls.residual = residual_policy_from_checkpoint(ck);
  if (!ls.residual->variant().zero_base_action) {
    ls.base = base_policy_from_checkpoint(
        load_artifact(base_ckpt_path(out_root, seed)));
  }
  return ls;
}

uint64_t root_seed(const CommandArgs& args, const ExperimentConfig& cfg) {
  return args.seed ? *args.seed : cfg.seeds.front();
}

uint64_t episode_stream(const ExperimentConfig& cfg, uint64_t seed) {
  return Rng(cfg.eval_seed).split(seed).next_u64();
}

nlohmann::json eval_record(const EvalReport& rep, const std::string& variant,
                           const std::string& domain, uint64_t seed) {
  nlohmann::json j;
  j["success_rate"] = rep.success_rate;
  if (std::isnan(rep.mean_cycle_time_s)) {
    j["mean_cycle_time_s"] = nullptr;
  } else {
    j["mean_cycle_time_s"] = rep.mean_cycle_time_s;
  }
  j["n_episodes"] = rep.n_episodes;
  j["variant"] = variant;
  j["domain"] = domain;
  j["seed"] = seed;
  return j;
}

int cmd_pretrain(const CommandArgs& args, const ExperimentConfig& cfg,
                 const std::string& out_root, std::ostream& out) {
  const uint64_t seed = root_seed(args, cfg);
  const std::string dir =
      make_run_dir(out_root, "pretrain_s" + std::to_string(seed), args.force);
  PretrainResult r = pretrain(cfg.ppo, cfg.sim_domain, seed);
  r.checkpoint.save(dir + "/base.ck");
  write_curve_csv(dir + "/curve.csv", r.curve);
  write_run_info(dir, args, cfg,
                 {{"seed", seed},
                  {"env_steps", r.env_steps},
                  {"final_eval_success", r.final_eval_success},
                  {"reached_threshold", r.reached_threshold}});
  out << "pretrain seed " << seed << ": success " << r.final_eval_success
      << " after " << r.env_steps << " env steps -> " << dir << "\n";
  return r.reached_threshold ? kExitOk : kExitThresholdMissed;
}

int cmd_collect_demos(const CommandArgs& args, const ExperimentConfig& cfg,
                      const std::string& out_root, std::ostream& out) {
  const uint64_t seed = root_seed(args, cfg);
  const int n = args.n ? *args.n : cfg.n_demos;
  const GaussianPolicy base = base_policy_from_checkpoint(
      load_artifact(base_ckpt_path(out_root, seed)));
  const std::string dir = make_run_dir(
      out_root, "demos_s" + std::to_string(seed) + "_n" + std::to_string(n),
      args.force);
  const uint64_t demo_seed = Rng(seed).split(kDemoSeedStream).next_u64();
  const DemoCollection c = collect_demos(base, cfg.real_domain, n, demo_seed);
  save_demos(dir, c.trajectories);
  nlohmann::json manifest;
  manifest["n_trajectories"] = c.trajectories.size();
  manifest["attempts"] = c.attempts;
  // Successes per attempt during collection: a zero-shot success estimate.
  manifest["zero_shot_success_estimate"] =
      static_cast<double>(c.trajectories.size()) / c.attempts;
  manifest["z_count"] = c.z_count;
  manifest["z_sum"] = c.z_sum;
  manifest["z_sq_sum"] = c.z_sq_sum;
  manifest["seed"] = seed;
  write_json(dir + "/manifest.json", manifest);
  write_run_info(dir, args, cfg, {{"seed", seed}, {"n", n}});
  out << "collected " << c.trajectories.size() << " demos in " << c.attempts
      << " attempts -> " << dir << "\n";
  return kExitOk;
}

int cmd_train_residual(const CommandArgs& args, const ExperimentConfig& cfg,
                       const std::string& out_root, std::ostream& out) {
  const uint64_t seed = root_seed(args, cfg);
  const ResidualVariant variant = variant_by_name(args.variant);
  const std::string demo_path = demos_dir(out_root, seed, cfg.n_demos);
  if (!fs::exists(demo_path + "/manifest.json")) {
    throw MissingArtifactError(demo_path + "/manifest.json");
  }
  const std::vector<std::vector<Transition>> demos = load_demos(demo_path);
  std::optional<GaussianPolicy> base;
  if (!variant.zero_base_action) {
    base = base_policy_from_checkpoint(
        load_artifact(base_ckpt_path(out_root, seed)));
  }
  const std::string dir = make_run_dir(
      out_root, "residual_" + args.variant + "_s" + std::to_string(seed),
      args.force);
  const uint64_t train_seed = Rng(seed).split(kTrainSeedStream).next_u64();
  const ResidualTrainResult r =
      train_residual(base ? &*base : nullptr, cfg.real_domain, demos, cfg.rlpd,
                     train_seed, variant);
  r.checkpoint.save(dir + "/residual.ck");
  write_metrics_csv(dir + "/metrics.csv", r.metrics);
  write_run_info(dir, args, cfg,
                 {{"seed", seed},
                  {"variant", args.variant},
                  {"env_steps", r.env_steps},
                  {"final_eval_success", r.final_eval_success},
                  {"demos_admitted", r.demos_admitted}});
  out << "residual " << args.variant << " seed " << seed << ": success "
      << r.final_eval_success << " after " << r.env_steps
      << " env steps -> " << dir << "\n";
  return kExitOk;
}

int cmd_eval(const CommandArgs& args, const ExperimentConfig& cfg,
             const std::string& out_root, std::ostream& out) {
  const uint64_t seed = root_seed(args, cfg);
  const int episodes = args.episodes ? *args.episodes : cfg.eval_episodes;
  const DomainConfig& domain = domain_by_name(cfg, args.domain);
  const LoadedStack ls = load_stack(out_root, args.variant, seed);
  const std::string dir = make_run_dir(
      out_root,
      "eval_" + args.variant + "_" + args.domain + "_s" + std::to_string(seed),
      args.force);
  const EvalReport rep =
      evaluate(ls.stack(), domain, episodes, episode_stream(cfg, seed));
  write_json(dir + "/report.json", rep.to_json());
  write_run_info(dir, args, cfg,
                 {{"seed", seed},
                  {"variant", args.variant},
                  {"domain", args.domain},
                  {"n_episodes", episodes}});
  out << eval_record(rep, args.variant, args.domain, seed).dump() << "\n";
  return kExitOk;
}

int cmd_sweep(const CommandArgs& args, const ExperimentConfig& cfg,
              const std::string& out_root, std::ostream& out) {
  const uint64_t seed = root_seed(args, cfg);
  const int episodes = args.episodes ? *args.episodes : cfg.eval_episodes;
  const LoadedStack ls = load_stack(out_root, args.variant, seed);
  const std::string dir = make_run_dir(
      out_root, "sweep_" + args.variant + "_s" + std::to_string(seed),
      args.force);
  const RobustnessGrid grid = robustness_sweep(ls.stack(), cfg.real_domain,
                                               episodes,
                                               episode_stream(cfg, seed));
  write_json(dir + "/grid.json", grid.to_json());
  write_run_info(dir, args, cfg,
                 {{"seed", seed},
                  {"variant", args.variant},
                  {"n_episodes", episodes}});
  out << "sweep " << args.variant << " seed " << seed << ": mean success "
      << grid.mean_success_all << " (displaced " << grid.mean_success_displaced
      << ") -> " << dir << "\n";
  return kExitOk;
}

int cmd_ablate(const CommandArgs& args, const ExperimentConfig& cfg,
               const std::string& out_root, std::ostream& out) {
  const std::vector<uint64_t> seeds =
      args.seeds.empty() ? cfg.seeds : args.seeds;
  const std::string dir = make_run_dir(out_root, "ablations", args.force);
  ExperimentCache cache((fs::path(out_root) / "cache").string(),
                        config_fingerprint(cfg.sim_domain, cfg.real_domain,
                                           cfg.ppo, cfg.rlpd));
  ExperimentPipeline pipe(cfg.sim_domain, cfg.real_domain, cfg.ppo, cfg.rlpd,
                          &cache);
  pipe.n_demos = cfg.n_demos;
  const AblationTable table =
      run_ablations(pipe, seeds, cfg.eval_episodes, cfg.eval_seed);
  write_json(dir + "/table.json", table.to_json());
  {
    std::ofstream os(dir + "/table.csv");
    if (!os) throw std::runtime_error("cannot write " + dir + "/table.csv");
    os << table.to_csv();
  }
  write_run_info(dir, args, cfg, {{"seeds", seeds}});
  for (const AblationRow& row : table.rows) {
    out << "ablation " << row.name << ": mean success " << row.mean_success
        << "\n";
  }
  out << "table -> " << dir << "\n";
  return kExitOk;
}

int cmd_transfer(const CommandArgs& args, const ExperimentConfig& cfg,
                 const std::string& out_root, std::ostream& out) {
  const uint64_t seed = root_seed(args, cfg);
  const std::string dir = make_run_dir(
      out_root, "transfer_s" + std::to_string(seed), args.force);
  ExperimentCache cache((fs::path(out_root) / "cache").string(),
                        config_fingerprint(cfg.sim_domain, cfg.real_domain,
                                           cfg.ppo, cfg.rlpd));
  ExperimentPipeline pipe(cfg.sim_domain, cfg.real_domain, cfg.ppo, cfg.rlpd,
                          &cache);
  pipe.n_demos = cfg.n_demos;
  const TransferReport report = transfer_scenario(
      pipe, cfg.transfer_domain, seed, cfg.eval_episodes, cfg.eval_seed);
  write_json(dir + "/report.json", report.to_json());
  write_run_info(dir, args, cfg, {{"seed", seed}});
  out << "transfer seed " << seed << ": zero-shot "
      << report.zero_shot.success_rate << ", post-residual "
      << report.post_residual.success_rate << " -> " << dir << "\n";
  return kExitOk;
}

}  // namespace

std::string pretrain_dir(const std::string& root, uint64_t seed) {
  return (fs::path(root) / ("pretrain_s" + std::to_string(seed))).string();
}

std::string base_ckpt_path(const std::string& root, uint64_t seed) {
  return pretrain_dir(root, seed) + "/base.ck";
}

std::string demos_dir(const std::string& root, uint64_t seed, int n) {
  return (fs::path(root) /
          ("demos_s" + std::to_string(seed) + "_n" + std::to_string(n)))
      .string();
}

std::string residual_dir(const std::string& root, const std::string& variant,
                         uint64_t seed) {
  return (fs::path(root) / ("residual_" + variant + "_s" + std::to_string(seed)))
      .string();
}

std::string residual_ckpt_path(const std::string& root,
                               const std::string& variant, uint64_t seed) {
  return residual_dir(root, variant, seed) + "/residual.ck";
}

std::string resolve_out_root(const std::string& flag_out,
                             const std::string& config_out) {
  if (!flag_out.empty()) return flag_out;
  if (const char* env = std::getenv("RESIDRL_OUT");
      env != nullptr && *env != '\0') {
    return env;
  }
  if (!config_out.empty()) return config_out;
  return "out";
}

int run_command(const CommandArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    const std::string out_root = resolve_out_root(args.out, cfg.out);
    if (args.command == "pretrain") return cmd_pretrain(args, cfg, out_root, out);
    if (args.command == "collect-demos") {
      return cmd_collect_demos(args, cfg, out_root, out);
    }
    if (args.command == "train-residual") {
      return cmd_train_residual(args, cfg, out_root, out);
    }
    if (args.command == "eval") return cmd_eval(args, cfg, out_root, out);
    if (args.command == "sweep") return cmd_sweep(args, cfg, out_root, out);
    if (args.command == "ablate") return cmd_ablate(args, cfg, out_root, out);
    if (args.command == "transfer") return cmd_transfer(args, cfg, out_root, out);
    err << "unknown command: " << args.command << "\n";
    return kExitConfig;
  } catch (const KvParseError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  } catch (const OutputExistsError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingArtifactError& e) {
    err << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const DemoFloorError& e) {
    err << e.what() << "\n";
    return kExitCalibration;
  } catch (const std::invalid_argument& e) {
    err << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return 1;
  }
}

}  // namespace residrl
