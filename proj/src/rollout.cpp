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

#include "gmmbo/rollout.hpp"

#include <stdexcept>

#include "gmmbo/rng.hpp"

namespace gmmbo {
namespace {
constexpr std::uint64_t kEpisodeTag = 0x65706973;  // training episode seeds
}

void RolloutConfig::validate() const {
  if (dt <= 0.0 || v_max <= 0.0) throw std::invalid_argument("dt and v_max must be positive");
  if (max_steps < 1 || j < 1) throw std::invalid_argument("max_steps and j must be >= 1");
}

RolloutResult rollout(const GmmPolicy& policy, Environment& env, const RolloutConfig& config,
                      std::int64_t record_seed) {
  config.validate();
  RolloutResult result;
  result.trajectory.task_id = env.task_id();
  result.trajectory.seed = record_seed;

  Eigen::VectorXd s = env.initial_state();
  for (int step = 0; step < config.max_steps; ++step) {
    if (!s.allFinite()) {
      result.aborted_non_finite = true;
      break;
    }
    Eigen::VectorXd v;
    try {
      v = policy.gmr(s);
    } catch (const std::invalid_argument&) {
      result.aborted_non_finite = true;
      break;
    }
    if (!v.allFinite()) {
      result.aborted_non_finite = true;
      break;
    }
    const double speed = v.norm();
    if (speed > config.v_max) v *= config.v_max / speed;

    result.trajectory.steps.push_back({step * config.dt, s, v});
    s = s + config.dt * v;
    if (env.step(s) == StepStatus::kSuccess) {
      result.reward = 1;
      break;
    }
  }
  result.trajectory.success = result.reward == 1;
  return result;
}

Observation evaluate_h(const GmmPolicy& policy, const UpdateVector& update,
                       const EnvFactory& env_factory, const RolloutConfig& config,
                       std::uint64_t run_seed, int run_index,
                       std::vector<Trajectory>* trajectories_out) {
  config.validate();
  Observation obs{update, 0.0, config.j, run_index, false};
  std::optional<GmmPolicy> updated;
  try {
    updated = integrate(policy, update);
  } catch (const Rank1RejectedError&) {
    obs.rank1_rejected = true;
    return obs;  // scores 0
  }

  int total = 0;
  for (int e = 0; e < config.j; ++e) {
    const std::uint64_t episode_seed =
        split_seed(split_seed(run_seed, kEpisodeTag, static_cast<std::uint64_t>(run_index)), e);
    auto env = env_factory(episode_seed);
    RolloutResult r = rollout(*updated, *env, config, static_cast<std::int64_t>(episode_seed));
    total += r.reward;
    if (trajectories_out) trajectories_out->push_back(std::move(r.trajectory));
  }
  obs.mean_return = static_cast<double>(total) / config.j;
  return obs;
}

double evaluate_policy(const GmmPolicy& policy, const EnvFactory& env_factory,
                       const RolloutConfig& config, std::uint64_t seed, int episodes) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  int total = 0;
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t episode_seed = split_seed(seed, 0x6576616C /*eval*/, e);
    auto env = env_factory(episode_seed);
    total += rollout(policy, *env, config, static_cast<std::int64_t>(episode_seed)).reward;
  }
  return static_cast<double>(total) / episodes;
}

}  // namespace gmmbo
