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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gmmbo/forest.hpp"
#include "gmmbo/rng.hpp"
#include "gmmbo/updates.hpp"

namespace gmmbo {

// Sequential model-based optimization over the bounded update space:
// a random-forest surrogate over observed (update, mean return) pairs,
// expected improvement (optionally on log-transformed costs) as the
// acquisition, and incumbent tracking. Internally costs are minimized,
// cost = 1 - mean return; every reported number is a success rate.

struct Observation {
  UpdateVector update;
  double mean_return = 0.0;
  int episodes = 0;  // j
  int run_index = 0;
  bool rank1_rejected = false;

  double cost() const { return 1.0 - mean_return; }
  // mean_return must average `episodes` binary rewards.
  void validate() const;
};

struct Incumbent {
  UpdateVector update;
  double mean_return = 0.0;
  int found_at = 0;  // observation index
};

// Closed-form expected improvement under minimization: with
// z = (best - mean)/std, EI = (best - mean) Phi(z) + std phi(z); for
// std = 0 this degenerates to max(best - mean, 0).
double expected_improvement(double mean, double std_dev, double best_cost);

struct AcquisitionConfig {
  bool log_ei = true;
  double cost_floor = 1e-3;  // c -> log(c + floor)
  int n_init = 8;
  int n_uniform = 512;
  int n_gaussian = 512;
  double perturb_scale = 0.1;  // per-dimension std as a fraction of the bound
};

// Acquisition value of a candidate. The log variant transforms the
// per-tree cost predictions (and the best cost) by log(c + floor) before
// taking the cross-tree mean/std.
double acquisition_value(const RandomForest& forest, const Eigen::VectorXd& x, double best_cost,
                         const AcquisitionConfig& config);

// Per-dimension bound magnitudes of the flat update space.
Eigen::VectorXd bound_magnitudes(const UpdateSpec& spec);

// Next candidate: quasi-uniform while fewer than n_init observations exist,
// afterwards the acquisition argmax over n_uniform uniform draws plus
// n_gaussian clamped Gaussian perturbations of the incumbent (ties keep the
// lowest candidate index).
UpdateVector propose(const RandomForest* forest, const UpdateSpec& spec,
                     const std::optional<Incumbent>& incumbent, int observation_count,
                     Rng& rng, const AcquisitionConfig& config);

// Observation with maximal mean return; ties keep the earliest. Empty
// dataset yields nullopt.
std::optional<Incumbent> update_incumbent(const std::vector<Observation>& dataset);

struct IncumbentEvent {
  int observation_index = 0;
  int episode = 0;  // training episodes consumed at adoption
  double mean_return = 0.0;
};

struct OptHistory {
  std::vector<Observation> observations;
  std::vector<IncumbentEvent> incumbent_events;
};

struct OptimizerConfig {
  ForestConfig forest;
  AcquisitionConfig acquisition;
};

using Objective = std::function<Observation(const UpdateVector&, int run_index)>;
using IncumbentCallback = std::function<void(const Incumbent&, int episode)>;

struct OptimizeResult {
  std::optional<Incumbent> incumbent;
  OptHistory history;
};

// propose -> evaluate -> append -> refit -> incumbent, until the episode
// budget is exhausted (budget/j observations). Deterministic given the seed
// and a deterministic objective: iteration i draws from an RNG derived from
// (seed, i), so a run resumed from a prefix of past observations continues
// identically.
OptimizeResult optimize(const UpdateSpec& spec, const Objective& objective, int episode_budget,
                        int episodes_per_eval, const OptimizerConfig& config, std::uint64_t seed,
                        const IncumbentCallback& on_incumbent = {},
                        std::vector<Observation> initial_observations = {});

// Observation-log lines: one JSON observation per line with
// {"event":"incumbent",...} lines interleaved after the observation that
// produced them. A loaded log can seed optimize() for an exact resume.
std::string observation_to_json(const Observation& obs);
Observation observation_from_json(const std::string& line);

void save_observation_log(const std::string& path, const OptHistory& history);
OptHistory load_observation_log(const std::string& path);

}  // namespace gmmbo
