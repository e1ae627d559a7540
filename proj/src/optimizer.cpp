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

#include "gmmbo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gmmbo {
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kProposeTag = 0x70726F70;  // per-iteration proposal stream
constexpr std::uint64_t kForestTag = 0x666F7265;   // per-iteration forest seed

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<double> costs_of(const std::vector<Observation>& dataset) {
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& obs : dataset) out.push_back(obs.cost());
  return out;
}

}  // namespace

void Observation::validate() const {
  if (episodes < 1) throw std::invalid_argument("observation needs episodes >= 1");
  if (mean_return < 0.0 || mean_return > 1.0)
    throw std::invalid_argument("mean return must lie in [0, 1]");
  const double scaled = mean_return * episodes;
  if (std::abs(scaled - std::round(scaled)) > 1e-9)
    throw std::invalid_argument("mean return must average binary rewards");
}

double expected_improvement(double mean, double std_dev, double best_cost) {
  if (std_dev < 0.0) throw std::invalid_argument("negative standard deviation");
  if (std_dev == 0.0) return std::max(best_cost - mean, 0.0);
  const double z = (best_cost - mean) / std_dev;
  return std::max((best_cost - mean) * normal_cdf(z) + std_dev * normal_pdf(z), 0.0);
}

double acquisition_value(const RandomForest& forest, const Eigen::VectorXd& x, double best_cost,
                         const AcquisitionConfig& config) {
  Eigen::VectorXd preds = forest.tree_predictions(x);
  double best = best_cost;
  if (config.log_ei) {
    preds = (preds.array() + config.cost_floor).log();
    best = std::log(best_cost + config.cost_floor);
  }
  const double mean = preds.mean();
  const double var = (preds.array() - mean).square().mean();
  return expected_improvement(mean, std::sqrt(std::max(var, 0.0)), best);
}

Eigen::VectorXd bound_magnitudes(const UpdateSpec& spec) {
  const int dim = dimension(spec);
  const int block = spec.per_component_dimension();
  Eigen::VectorXd bounds(dim);
  for (int c = 0; c < spec.k; ++c) {
    const int base = c * block;
    if (spec.weights) bounds[base + spec.weight_offset()] = spec.weight_bound;
    if (spec.means)
      bounds.segment(base + spec.mean_offset(), 2 * spec.dim_s).setConstant(spec.mean_bound);
    if (spec.cov != CovUpdate::kNone)
      bounds.segment(base + spec.cov_offset(), spec.dim_s).setConstant(spec.cov_sigma);
  }
  return bounds;
}

UpdateVector propose(const RandomForest* forest, const UpdateSpec& spec,
                     const std::optional<Incumbent>& incumbent, int observation_count,
                     Rng& rng, const AcquisitionConfig& config) {
  const Eigen::VectorXd bounds = bound_magnitudes(spec);
  const int dim = static_cast<int>(bounds.size());

  auto uniform_draw = [&]() {
    Eigen::VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x[i] = rng.uniform(-bounds[i], bounds[i]);
    return x;
  };

  if (observation_count < config.n_init || forest == nullptr || !incumbent) {
    return UpdateVector(spec, uniform_draw());
  }

  std::vector<Eigen::VectorXd> candidates;
  candidates.reserve(config.n_uniform + config.n_gaussian);
  for (int i = 0; i < config.n_uniform; ++i) candidates.push_back(uniform_draw());
  const Eigen::VectorXd& center = incumbent->update.values();
  for (int i = 0; i < config.n_gaussian; ++i) {
    Eigen::VectorXd x(dim);
    for (int d = 0; d < dim; ++d) {
      const double v = center[d] + rng.normal() * config.perturb_scale * bounds[d];
      x[d] = std::clamp(v, -bounds[d], bounds[d]);
    }
    candidates.push_back(std::move(x));
  }

  const double best_cost = 1.0 - incumbent->mean_return;
  int best_idx = 0;
  double best_acq = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double acq = acquisition_value(*forest, candidates[i], best_cost, config);
    if (acq > best_acq) {  // strict: ties keep the lowest index
      best_acq = acq;
      best_idx = static_cast<int>(i);
    }
  }
  return UpdateVector(spec, candidates[best_idx]);
}

std::optional<Incumbent> update_incumbent(const std::vector<Observation>& dataset) {
  if (dataset.empty()) return std::nullopt;
  int best = 0;
  for (int i = 1; i < static_cast<int>(dataset.size()); ++i)
    if (dataset[i].mean_return > dataset[best].mean_return) best = i;
  return Incumbent{dataset[best].update, dataset[best].mean_return, best};
}

OptimizeResult optimize(const UpdateSpec& spec, const Objective& objective, int episode_budget,
                        int episodes_per_eval, const OptimizerConfig& config, std::uint64_t seed,
                        const IncumbentCallback& on_incumbent,
                        std::vector<Observation> initial_observations) {
  spec.validate();
  if (episodes_per_eval < 1) throw std::invalid_argument("episodes per evaluation must be >= 1");
  if (episode_budget < episodes_per_eval)
    throw std::invalid_argument("episode budget below one evaluation");

  OptimizeResult result;
  std::vector<Observation>& dataset = result.history.observations;
  dataset = std::move(initial_observations);
  std::optional<Incumbent> incumbent = update_incumbent(dataset);

  const int target = episode_budget / episodes_per_eval;
  for (int i = static_cast<int>(dataset.size()); i < target; ++i) {
    Rng rng(split_seed(seed, kProposeTag, i));

    std::optional<RandomForest> forest;
    if (static_cast<int>(dataset.size()) >= config.acquisition.n_init && !dataset.empty()) {
      std::vector<Eigen::VectorXd> inputs;
      inputs.reserve(dataset.size());
      for (const auto& obs : dataset) inputs.push_back(obs.update.values());
      ForestConfig fc = config.forest;
      fc.seed = split_seed(seed, kForestTag, i);
      forest.emplace(inputs, costs_of(dataset), fc);
    }

    UpdateVector candidate =
        propose(forest ? &*forest : nullptr, spec, incumbent,
                static_cast<int>(dataset.size()), rng, config.acquisition);

    Observation obs = objective(candidate, i);
    obs.run_index = i;
    obs.validate();
    dataset.push_back(std::move(obs));

    std::optional<Incumbent> next = update_incumbent(dataset);
    if (next && (!incumbent || next->found_at != incumbent->found_at)) {
      const int episode = (i + 1) * episodes_per_eval;
      result.history.incumbent_events.push_back(
          {next->found_at, episode, next->mean_return});
      if (on_incumbent) on_incumbent(*next, episode);
    }
    incumbent = std::move(next);
  }
  result.incumbent = incumbent;
  return result;
}

std::string observation_to_json(const Observation& obs) {
  json j;
  j["update"] = json::parse(update_to_json(obs.update));
  j["mean_return"] = obs.mean_return;
  j["episodes"] = obs.episodes;
  j["run_index"] = obs.run_index;
  j["rank1_rejected"] = obs.rank1_rejected;
  return j.dump();
}

Observation observation_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    Observation obs{update_from_json(j.at("update").dump()),
                    j.at("mean_return").get<double>(), j.at("episodes").get<int>(),
                    j.at("run_index").get<int>(), j.value("rank1_rejected", false)};
    obs.validate();
    return obs;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed observation line: ") + e.what());
  }
}

void save_observation_log(const std::string& path, const OptHistory& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  std::size_t event = 0;
  for (std::size_t i = 0; i < history.observations.size(); ++i) {
    out << observation_to_json(history.observations[i]) << "\n";
    while (event < history.incumbent_events.size() &&
           history.incumbent_events[event].observation_index <= static_cast<int>(i)) {
      const IncumbentEvent& e = history.incumbent_events[event];
      json j;
      j["event"] = "incumbent";
      j["episode"] = e.episode;
      j["observation_index"] = e.observation_index;
      j["mean_return"] = e.mean_return;
      out << j.dump() << "\n";
      ++event;
    }
  }
}

OptHistory load_observation_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open observation log: " + path);
  OptHistory history;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(std::string("malformed log line: ") + e.what());
    }
    if (j.contains("event")) {
      history.incumbent_events.push_back({j.at("observation_index").get<int>(),
                                          j.at("episode").get<int>(),
                                          j.at("mean_return").get<double>()});
    } else {
      history.observations.push_back(observation_from_json(line));
    }
  }
  return history;
}

}  // namespace gmmbo
