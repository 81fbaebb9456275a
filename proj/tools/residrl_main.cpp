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

#include "CLI11.hpp"
#include "residrl/commands.hpp"

namespace {

void add_common(CLI::App* cmd, residrl::CommandArgs& args) {
  cmd->add_option("config", args.config_path, "experiment config file")
      ->required();
  cmd->add_option("--out", args.out,
                  "output root (overrides $RESIDRL_OUT and the config)");
  cmd->add_flag("--force", args.force, "replace an existing run directory");
}

void add_seed(CLI::App* cmd, residrl::CommandArgs& args) {
  cmd->add_option("--seed", args.seed,
                  "root seed (default: first seed in the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"residual-policy experiment runner"};
  app.require_subcommand(1);
  residrl::CommandArgs args;

  CLI::App* pre = app.add_subcommand(
      "pretrain", "train the base policy in the simulated domain");
  add_common(pre, args);
  add_seed(pre, args);

  CLI::App* collect = app.add_subcommand(
      "collect-demos", "roll out the base policy with residual pseudo-labels");
  add_common(collect, args);
  add_seed(collect, args);
  collect->add_option("--n", args.n, "successful trajectories to collect");

  CLI::App* train = app.add_subcommand(
      "train-residual", "train the residual policy on the deployment domain");
  add_common(train, args);
  add_seed(train, args);
  train->add_option("--variant", args.variant,
                    "full, no-demo-update, no-base-action-input, state-based, "
                    "or scratch-rl");

  CLI::App* ev = app.add_subcommand(
      "eval", "evaluate a policy stack; prints a single-line JSON record");
  add_common(ev, args);
  add_seed(ev, args);
  ev->add_option("--variant", args.variant,
                 "residual variant name, or base-only");
  ev->add_option("--domain", args.domain, "real, sim, or transfer");
  ev->add_option("--episodes", args.episodes, "evaluation episode count");

  CLI::App* sweep = app.add_subcommand(
      "sweep", "robustness grid over displaced socket poses");
  add_common(sweep, args);
  add_seed(sweep, args);
  sweep->add_option("--variant", args.variant,
                    "residual variant name, or base-only");
  sweep->add_option("--episodes", args.episodes,
                    "evaluation episodes per grid cell");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "train and compare every ablation variant");
  add_common(ablate, args);
  ablate->add_option("--seeds", args.seeds, "seed list (default: config seeds)")
      ->delimiter(',');

  CLI::App* transfer = app.add_subcommand(
      "transfer", "adapt the base policy to the transfer domain");
  add_common(transfer, args);
  add_seed(transfer, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage problems share the config exit class; --help stays a success.
    const int code = app.exit(e);
    return code == 0 ? residrl::kExitOk : residrl::kExitConfig;
  }

  args.command = app.get_subcommands().front()->get_name();
  return residrl::run_command(args);
}
