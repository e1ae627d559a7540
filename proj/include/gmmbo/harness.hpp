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

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gmmbo/optimizer.hpp"
#include "gmmbo/rollout.hpp"
#include "gmmbo/tasks.hpp"

namespace gmmbo {

// Experiment orchestration: demo generation, model fitting, optimization
// runs with reporting evaluations, the online-refit baseline, and report
// aggregation. Reporting evaluations use a seed namespace separate from
// training episodes and never enter the optimizer's dataset.

struct ExperimentConfig {
  std::string task_id = "slide";
  std::string task_file;    // overrides task_id when set
  std::string model_path;
  std::string demos_path;   // required by the online baseline
  std::string modality = "eig";  // tokens w|mu|eig|rxyz|rank1 joined by '+'
  int k = 5;  // component count used by the fit stage
  double weight_bound = 0.1;
  double mean_bound = 0.05;
  double cov_sigma = 0.1;
  double epsilon = 1e-3;
  int episode_budget = 500;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int eval_episodes = 50;
  double degrade_severity = 0.0;
  bool log_ei = true;
  double noise_std = 0.01;  // expert jitter for gen-demos
  bool dump_trajectories = false;  // per-episode trajectory files (large)
  RolloutConfig rollout;    // carries j
  ForestConfig forest;
  AcquisitionConfig acquisition;
  std::string out_prefix = "run";

  void validate() const;
};

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Parses the modality string ("mu", "rxyz", "eig", "mu+rxyz", "mu+eig",
// "rank1", optionally with a "w" token) into an update spec shaped for the
// policy.
UpdateSpec make_update_spec(const ExperimentConfig& config, const GmmPolicy& policy);

struct ReportPoint {
  int episode = 0;      // training episodes consumed when the policy was adopted
  double success = 0.0;  // reporting success rate over eval_episodes
};

struct RunReport {
  std::string task_id;
  std::string modality;
  std::string method = "bopt";  // or "online"
  int k = 0;
  std::uint64_t seed = 0;
  int j = 0;
  int episode_budget = 0;
  int eval_episodes = 0;
  double initial_success = 0.0;
  double final_success = 0.0;
  std::optional<int> episodes_to_80;
  std::vector<ReportPoint> curve;
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);
void save_report(const RunReport& report, const std::string& path);
RunReport load_report(const std::string& path);

// Scripted-expert demonstrations -> trajectory file (JSON lines with a
// meta header). Every demo seed is split from `seed`.
void cmd_gen_demos(const std::string& task, int n, std::uint64_t seed, const std::string& out,
                   double noise_std = 0.01, const RolloutConfig& config = {});

// EM fit of a demo file -> model file.
void cmd_fit(const std::string& demos_path, int k, std::uint64_t seed, const std::string& out);

// One optimization run per seed; writes <out>_seed<S>.log.jsonl and
// <out>_seed<S>.report.json, returns the per-seed reports.
std::vector<RunReport> cmd_optimize(const ExperimentConfig& config);

// Online-refit baseline: roll j episodes, grow the dataset with successful
// trajectories, warm-refit the GMM, repeat on the same budget and metrics.
std::vector<RunReport> cmd_baseline_online(const ExperimentConfig& config);

// Merges per-seed reports into mean curves (<out>_curves.csv) and a summary
// (<out>_summary.json) keyed by task/method/modality. episodes_to_80 is
// averaged over seeds that reached 80%, with the achieved fraction reported
// alongside.
void cmd_report(const std::vector<std::string>& report_paths, const std::string& out_prefix);

}  // namespace gmmbo
