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

#include "residrl/experiment_config.hpp"

#include <filesystem>
#include <set>

#include "residrl/kv_config.hpp"

namespace residrl {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "sim_domain",       "real_domain",
      "transfer_domain",  "seeds",
      "n_demos",          "eval_episodes",
      "eval_seed",        "out",

      "ppo.n_envs",       "ppo.rollout_len",
      "ppo.clip_ratio",   "ppo.gamma",
      "ppo.gae_lambda",   "ppo.epochs",
      "ppo.minibatch_size", "ppo.lr",
      "ppo.entropy_coef", "ppo.value_coef",
      "ppo.total_env_steps", "ppo.hidden",
      "ppo.init_log_std", "ppo.socket_jitter_mm",
      "ppo.socket_jitter_deg", "ppo.eval_every_iters",
      "ppo.eval_episodes", "ppo.early_stop_success",

      "rlpd.batch_size",  "rlpd.utd_ratio",
      "rlpd.gamma",       "rlpd.tau",
      "rlpd.entropy_target", "rlpd.actor_lr",
      "rlpd.critic_lr",   "rlpd.alpha_lr",
      "rlpd.demo_capacity", "rlpd.online_capacity",
      "rlpd.max_env_steps", "rlpd.actor_period",
      "rlpd.eval_every",  "rlpd.eval_episodes",
      "rlpd.enc_hidden",  "rlpd.enc_feature",
      "rlpd.hidden",      "rlpd.init_log_std_bias",
      "rlpd.init_log_alpha",
  };
  return keys;
}

DomainConfig domain_ref(const KvConfig& kv, const std::string& key,
                        DomainConfig fallback, const std::string& config_path) {
  if (!kv.has(key)) return fallback;
  std::filesystem::path p = kv.get_string(key);
  if (p.is_relative() && !kv.base_dir().empty()) {
    p = std::filesystem::path(kv.base_dir()) / p;
  }
  if (!std::filesystem::exists(p)) {
    throw KvParseError(config_path + ": key `" + key +
                       "` references a missing file: " + p.string());
  }
  return DomainConfig::load(p.string());
}

std::vector<int> int_list(const KvConfig& kv, const std::string& key,
                          std::vector<int> fallback) {
  if (!kv.has(key)) return fallback;
  std::vector<int> out;
  for (long v : kv.get_int_list(key)) out.push_back(static_cast<int>(v));
  return out;
}

void apply_ppo(const KvConfig& kv, PpoConfig& c) {
  c.n_envs = static_cast<int>(kv.get_int("ppo.n_envs", c.n_envs));
  c.rollout_len = static_cast<int>(kv.get_int("ppo.rollout_len", c.rollout_len));
  c.clip_ratio = kv.get_double("ppo.clip_ratio", c.clip_ratio);
  c.gamma = kv.get_double("ppo.gamma", c.gamma);
  c.gae_lambda = kv.get_double("ppo.gae_lambda", c.gae_lambda);
  c.epochs = static_cast<int>(kv.get_int("ppo.epochs", c.epochs));
  c.minibatch_size =
      static_cast<int>(kv.get_int("ppo.minibatch_size", c.minibatch_size));
  c.lr = kv.get_double("ppo.lr", c.lr);
  c.entropy_coef = kv.get_double("ppo.entropy_coef", c.entropy_coef);
  c.value_coef = kv.get_double("ppo.value_coef", c.value_coef);
  c.total_env_steps = kv.get_int("ppo.total_env_steps", c.total_env_steps);
  c.hidden = int_list(kv, "ppo.hidden", c.hidden);
  c.init_log_std = kv.get_double("ppo.init_log_std", c.init_log_std);
  c.socket_jitter_mm =
      kv.get_double("ppo.socket_jitter_mm", c.socket_jitter_mm);
  c.socket_jitter_deg =
      kv.get_double("ppo.socket_jitter_deg", c.socket_jitter_deg);
  c.eval_every_iters =
      static_cast<int>(kv.get_int("ppo.eval_every_iters", c.eval_every_iters));
  c.eval_episodes =
      static_cast<int>(kv.get_int("ppo.eval_episodes", c.eval_episodes));
  c.early_stop_success =
      kv.get_double("ppo.early_stop_success", c.early_stop_success);
}

void apply_rlpd(const KvConfig& kv, RlpdConfig& c) {
  c.batch_size = static_cast<int>(kv.get_int("rlpd.batch_size", c.batch_size));
  c.utd_ratio = static_cast<int>(kv.get_int("rlpd.utd_ratio", c.utd_ratio));
  c.gamma = kv.get_double("rlpd.gamma", c.gamma);
  c.tau = kv.get_double("rlpd.tau", c.tau);
  c.entropy_target = kv.get_double("rlpd.entropy_target", c.entropy_target);
  c.actor_lr = kv.get_double("rlpd.actor_lr", c.actor_lr);
  c.critic_lr = kv.get_double("rlpd.critic_lr", c.critic_lr);
  c.alpha_lr = kv.get_double("rlpd.alpha_lr", c.alpha_lr);
  c.demo_capacity =
      static_cast<int>(kv.get_int("rlpd.demo_capacity", c.demo_capacity));
  c.online_capacity =
      static_cast<int>(kv.get_int("rlpd.online_capacity", c.online_capacity));
  c.max_env_steps = kv.get_int("rlpd.max_env_steps", c.max_env_steps);
  c.actor_period =
      static_cast<int>(kv.get_int("rlpd.actor_period", c.actor_period));
  c.eval_every = static_cast<int>(kv.get_int("rlpd.eval_every", c.eval_every));
  c.eval_episodes =
      static_cast<int>(kv.get_int("rlpd.eval_episodes", c.eval_episodes));
  c.enc_hidden = static_cast<int>(kv.get_int("rlpd.enc_hidden", c.enc_hidden));
  c.enc_feature =
      static_cast<int>(kv.get_int("rlpd.enc_feature", c.enc_feature));
  c.hidden = int_list(kv, "rlpd.hidden", c.hidden);
  c.init_log_std_bias =
      kv.get_double("rlpd.init_log_std_bias", c.init_log_std_bias);
  c.init_log_alpha = kv.get_double("rlpd.init_log_alpha", c.init_log_alpha);
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  const KvConfig kv = KvConfig::load(path);
  for (const auto& [key, value] : kv.values()) {
    if (known_keys().count(key) == 0) {
      throw KvParseError(path + ": unknown experiment config key `" + key +
                         "`");
    }
  }

  ExperimentConfig cfg;
  cfg.sim_domain = domain_ref(kv, "sim_domain", DomainConfig::nominal(), path);
  cfg.real_domain =
      domain_ref(kv, "real_domain", DomainConfig::real_default(), path);
  cfg.transfer_domain =
      domain_ref(kv, "transfer_domain", DomainConfig::transfer_default(), path);

  if (kv.has("seeds")) {
    cfg.seeds.clear();
    for (long v : kv.get_int_list("seeds")) {
      if (v < 0) throw KvParseError(path + ": seeds must be non-negative");
      cfg.seeds.push_back(static_cast<uint64_t>(v));
    }
  }
  cfg.n_demos = static_cast<int>(kv.get_int("n_demos", cfg.n_demos));
  cfg.eval_episodes =
      static_cast<int>(kv.get_int("eval_episodes", cfg.eval_episodes));
  cfg.eval_seed =
      static_cast<uint64_t>(kv.get_int("eval_seed", static_cast<long>(cfg.eval_seed)));
  cfg.out = kv.get_string("out", "");
  if (cfg.n_demos < 1) throw KvParseError(path + ": n_demos must be >= 1");
  if (cfg.eval_episodes < 1) {
    throw KvParseError(path + ": eval_episodes must be >= 1");
  }

  apply_ppo(kv, cfg.ppo);
  apply_rlpd(kv, cfg.rlpd);
  cfg.ppo.validate();
  cfg.rlpd.validate();
  return cfg;
}

}  // namespace residrl
