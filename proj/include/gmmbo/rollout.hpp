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
#include <memory>
#include <string>

#include "gmmbo/gmm.hpp"
#include "gmmbo/optimizer.hpp"
#include "gmmbo/updates.hpp"

namespace gmmbo {

struct RolloutConfig {
  double dt = 0.05;
  int max_steps = 400;
  double v_max = 0.5;
  int j = 8;  // evaluation episodes per observation

  void validate() const;
};

enum class StepStatus { kRunning, kSuccess };

// What the episode engine needs from a task: a seeded initial state and a
// per-step success check. States are whatever frame the task defines; the
// engine integrates them verbatim.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string task_id() const = 0;
  virtual Eigen::VectorXd initial_state() const = 0;
  virtual StepStatus step(const Eigen::VectorXd& s_new) = 0;
};

using EnvFactory = std::function<std::unique_ptr<Environment>(std::uint64_t seed)>;

struct RolloutResult {
  Trajectory trajectory;
  int reward = 0;  // sparse: 1 iff the environment reported success
  bool aborted_non_finite = false;
};

// Euler rollout of s_dot = gmr(s) with the speed clipped to v_max in the
// 2-norm. The trajectory records every visited state with its clipped
// velocity. A non-finite state aborts the episode with reward 0.
RolloutResult rollout(const GmmPolicy& policy, Environment& env, const RolloutConfig& config,
                      std::int64_t record_seed = 0);

// Sparse evaluation h: integrates the update, plays j independently seeded
// episodes, and averages the binary rewards. Episode seeds are split from
// (run_seed, run_index, episode), so the result does not depend on
// execution order. A rejected rank-1 update scores 0 with the rejection
// flag set instead of failing the loop.
Observation evaluate_h(const GmmPolicy& policy, const UpdateVector& update,
                       const EnvFactory& env_factory, const RolloutConfig& config,
                       std::uint64_t run_seed, int run_index,
                       std::vector<Trajectory>* trajectories_out = nullptr);

// Success rate of a fixed policy over `episodes` seeded episodes; the
// reporting-side evaluation (never part of the optimizer's dataset).
double evaluate_policy(const GmmPolicy& policy, const EnvFactory& env_factory,
                       const RolloutConfig& config, std::uint64_t seed, int episodes);

}  // namespace gmmbo
