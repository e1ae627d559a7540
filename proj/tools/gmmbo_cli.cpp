// Copyright 2026 The gmmbo Authors.
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

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gmmbo/harness.hpp"

namespace {

// Exit codes: 0 success, 2 config/usage error, 3 runtime error.
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

// Shared `--config` plus the common override flags; every subcommand takes
// these, unused ones are simply ignored by the command.
struct Overrides {
  std::string config_path;
  std::optional<std::string> task;
  std::optional<int> k;
  std::optional<std::uint64_t> seed;
  std::optional<int> budget;
  std::optional<std::string> modality;
  std::optional<std::string> out;
  std::optional<double> degrade;
  std::optional<int> j;
  std::optional<std::string> model;
  std::optional<std::string> demos;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON");
    cmd->add_option("--task", task, "task preset id or task file");
    cmd->add_option("--k", k, "GMM component count (fit stage)");
    cmd->add_option("--seed", seed, "replace the seed list with a single seed");
    cmd->add_option("--budget", budget, "training episode budget");
    cmd->add_option("--modality", modality, "update modality: mu|rxyz|eig|mu+rxyz|mu+eig|rank1");
    cmd->add_option("--out", out, "output path or prefix");
    cmd->add_option("--degrade-severity", degrade, "damage the starting model first");
    cmd->add_option("--j", j, "episodes per evaluation");
    cmd->add_option("--model", model, "model file");
    cmd->add_option("--demos", demos, "demonstration file");
  }

  gmmbo::ExperimentConfig resolve() const {
    gmmbo::ExperimentConfig config =
        config_path.empty() ? gmmbo::ExperimentConfig{} : gmmbo::load_config(config_path);
    if (task) {
      if (task->size() > 5 && task->substr(task->size() - 5) == ".json") config.task_file = *task;
      else config.task_id = *task;
    }
    if (k) config.k = *k;
    if (seed) config.seeds = {*seed};
    if (budget) config.episode_budget = *budget;
    if (modality) config.modality = *modality;
    if (out) config.out_prefix = *out;
    if (degrade) config.degrade_severity = *degrade;
    if (j) config.rollout.j = *j;
    if (model) config.model_path = *model;
    if (demos) config.demos_path = *demos;
    config.validate();
    return config;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GMM dynamical-system policies improved by random-forest Bayesian optimization"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-demos", "generate scripted-expert demonstrations");
  Overrides gen_o;
  gen_o.attach(gen);
  int gen_n = 10;
  double gen_noise = -1.0;
  gen->add_option("--n", gen_n, "number of demonstrations");
  gen->add_option("--noise-std", gen_noise, "waypoint jitter (default from config)");

  auto* fit = app.add_subcommand("fit", "fit a GMM to demonstrations by EM");
  Overrides fit_o;
  fit_o.attach(fit);

  auto* opt = app.add_subcommand("optimize", "improve a model under sparse reward");
  Overrides opt_o;
  opt_o.attach(opt);

  auto* online = app.add_subcommand("baseline-online", "online-refit baseline");
  Overrides online_o;
  online_o.attach(online);

  auto* rep = app.add_subcommand("report", "merge per-seed reports into curves and a summary");
  Overrides rep_o;
  rep_o.attach(rep);
  std::vector<std::string> rep_inputs;
  rep->add_option("inputs", rep_inputs, "per-seed report JSON files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*gen) {
      const gmmbo::ExperimentConfig config = gen_o.resolve();
      const std::string task = config.task_file.empty() ? config.task_id : config.task_file;
      const std::string out = gen_o.out ? *gen_o.out : config.demos_path;
      if (out.empty()) throw std::invalid_argument("gen-demos needs --out or a demos path");
      const std::uint64_t seed = gen_o.seed ? *gen_o.seed : config.seeds.front();
      const double noise = gen_noise >= 0.0 ? gen_noise : config.noise_std;
      gmmbo::cmd_gen_demos(task, gen_n, seed, out, noise, config.rollout);
    } else if (*fit) {
      const gmmbo::ExperimentConfig config = fit_o.resolve();
      if (config.demos_path.empty()) throw std::invalid_argument("fit needs --demos");
      const std::string out = fit_o.out ? *fit_o.out : config.model_path;
      if (out.empty()) throw std::invalid_argument("fit needs --out or a model path");
      const std::uint64_t seed = fit_o.seed ? *fit_o.seed : config.seeds.front();
      gmmbo::cmd_fit(config.demos_path, config.k, seed, out);
    } else if (*opt) {
      const gmmbo::ExperimentConfig config = opt_o.resolve();
      if (config.model_path.empty()) throw std::invalid_argument("optimize needs --model");
      gmmbo::cmd_optimize(config);
    } else if (*online) {
      const gmmbo::ExperimentConfig config = online_o.resolve();
      if (config.model_path.empty()) throw std::invalid_argument("baseline-online needs --model");
      gmmbo::cmd_baseline_online(config);
    } else if (*rep) {
      const gmmbo::ExperimentConfig config = rep_o.resolve();
      gmmbo::cmd_report(rep_inputs, config.out_prefix);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
