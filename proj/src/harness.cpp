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

#include "gmmbo/harness.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gmmbo {
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kDemoTag = 0x64656D6F;
constexpr std::uint64_t kReportTag = 0x72657074;  // reporting-eval seed namespace
constexpr std::uint64_t kOnlineTag = 0x6F6E6C69;  // baseline training episodes

TaskSpec resolve_task(const ExperimentConfig& config) {
  return config.task_file.empty() ? builtin_task(config.task_id) : load_task(config.task_file);
}

GmmPolicy load_start_policy(const ExperimentConfig& config) {
  GmmPolicy policy = load_model(config.model_path);
  if (config.degrade_severity > 0.0) policy = degrade(policy, config.degrade_severity);
  return policy;
}

std::optional<int> first_episode_at_80(const std::vector<ReportPoint>& curve) {
  for (const auto& point : curve)
    if (point.success >= 0.8) return point.episode;
  return std::nullopt;
}

RunReport base_report(const ExperimentConfig& config, const TaskSpec& task, int k,
                      std::uint64_t seed) {
  RunReport report;
  report.task_id = task.task_id;
  report.modality = config.modality;
  report.k = k;
  report.seed = seed;
  report.j = config.rollout.j;
  report.episode_budget = config.episode_budget;
  report.eval_episodes = config.eval_episodes;
  return report;
}

void finalize_report(RunReport& report) {
  report.final_success = report.curve.back().success;
  report.episodes_to_80 = first_episode_at_80(report.curve);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw std::invalid_argument("config needs at least one seed");
  if (k < 1) throw std::invalid_argument("config needs k >= 1");
  if (episode_budget < rollout.j) throw std::invalid_argument("budget below one evaluation");
  if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
  if (degrade_severity < 0.0) throw std::invalid_argument("degrade severity must be >= 0");
  rollout.validate();
  forest.validate();
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = c.task_id;
  j["task_file"] = c.task_file;
  j["model"] = c.model_path;
  j["demos"] = c.demos_path;
  j["modality"] = c.modality;
  j["k"] = c.k;
  j["bounds"] = {{"weights", c.weight_bound}, {"means", c.mean_bound}, {"cov_sigma", c.cov_sigma}};
  j["epsilon"] = c.epsilon;
  j["budget"] = c.episode_budget;
  j["seeds"] = c.seeds;
  j["eval_episodes"] = c.eval_episodes;
  j["degrade_severity"] = c.degrade_severity;
  j["log_ei"] = c.log_ei;
  j["noise_std"] = c.noise_std;
  j["dump_trajectories"] = c.dump_trajectories;
  j["rollout"] = {{"dt", c.rollout.dt},
                  {"max_steps", c.rollout.max_steps},
                  {"v_max", c.rollout.v_max},
                  {"j", c.rollout.j}};
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"min_samples_leaf", c.forest.min_samples_leaf},
                 {"feature_subsample", c.forest.feature_subsample},
                 {"bootstrap", c.forest.bootstrap}};
  j["acquisition"] = {{"n_init", c.acquisition.n_init},
                      {"n_uniform", c.acquisition.n_uniform},
                      {"n_gaussian", c.acquisition.n_gaussian},
                      {"perturb_scale", c.acquisition.perturb_scale},
                      {"cost_floor", c.acquisition.cost_floor}};
  j["out"] = c.out_prefix;
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ExperimentConfig c;
    c.task_id = j.value("task", c.task_id);
    c.task_file = j.value("task_file", c.task_file);
    c.model_path = j.value("model", c.model_path);
    c.demos_path = j.value("demos", c.demos_path);
    c.modality = j.value("modality", c.modality);
    c.k = j.value("k", c.k);
    if (j.contains("bounds")) {
      c.weight_bound = j["bounds"].value("weights", c.weight_bound);
      c.mean_bound = j["bounds"].value("means", c.mean_bound);
      c.cov_sigma = j["bounds"].value("cov_sigma", c.cov_sigma);
    }
    c.epsilon = j.value("epsilon", c.epsilon);
    c.episode_budget = j.value("budget", c.episode_budget);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.degrade_severity = j.value("degrade_severity", c.degrade_severity);
    c.log_ei = j.value("log_ei", c.log_ei);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.dump_trajectories = j.value("dump_trajectories", c.dump_trajectories);
    if (j.contains("rollout")) {
      c.rollout.dt = j["rollout"].value("dt", c.rollout.dt);
      c.rollout.max_steps = j["rollout"].value("max_steps", c.rollout.max_steps);
      c.rollout.v_max = j["rollout"].value("v_max", c.rollout.v_max);
      c.rollout.j = j["rollout"].value("j", c.rollout.j);
    }
    if (j.contains("forest")) {
      c.forest.n_trees = j["forest"].value("n_trees", c.forest.n_trees);
      c.forest.min_samples_leaf = j["forest"].value("min_samples_leaf", c.forest.min_samples_leaf);
      c.forest.feature_subsample =
          j["forest"].value("feature_subsample", c.forest.feature_subsample);
      c.forest.bootstrap = j["forest"].value("bootstrap", c.forest.bootstrap);
    }
    if (j.contains("acquisition")) {
      c.acquisition.n_init = j["acquisition"].value("n_init", c.acquisition.n_init);
      c.acquisition.n_uniform = j["acquisition"].value("n_uniform", c.acquisition.n_uniform);
      c.acquisition.n_gaussian = j["acquisition"].value("n_gaussian", c.acquisition.n_gaussian);
      c.acquisition.perturb_scale =
          j["acquisition"].value("perturb_scale", c.acquisition.perturb_scale);
      c.acquisition.cost_floor = j["acquisition"].value("cost_floor", c.acquisition.cost_floor);
    }
    c.out_prefix = j.value("out", c.out_prefix);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

UpdateSpec make_update_spec(const ExperimentConfig& config, const GmmPolicy& policy) {
  UpdateSpec spec;
  spec.k = policy.components();
  spec.dim_s = policy.dim_s();
  spec.weight_bound = config.weight_bound;
  spec.mean_bound = config.mean_bound;
  spec.cov_sigma = config.cov_sigma;
  spec.epsilon = config.epsilon;

  std::stringstream ss(config.modality);
  std::string token;
  while (std::getline(ss, token, '+')) {
    if (token == "w") {
      spec.weights = true;
    } else if (token == "mu") {
      spec.means = true;
    } else if (token == "eig" || token == "rxyz" || token == "rank1") {
      if (spec.cov != CovUpdate::kNone)
        throw std::invalid_argument("at most one covariance modality");
      spec.cov = token == "eig" ? CovUpdate::kEig
                                : (token == "rxyz" ? CovUpdate::kRot : CovUpdate::kRank1);
    } else {
      throw std::invalid_argument("unknown modality token: " + token);
    }
  }
  spec.validate();
  return spec;
}

std::string report_to_json(const RunReport& r) {
  json j;
  j["task"] = r.task_id;
  j["method"] = r.method;
  j["modality"] = r.modality;
  j["k"] = r.k;
  j["seed"] = r.seed;
  j["j"] = r.j;
  j["budget"] = r.episode_budget;
  j["eval_episodes"] = r.eval_episodes;
  j["initial_success"] = r.initial_success;
  j["final_success"] = r.final_success;
  if (r.episodes_to_80) j["episodes_to_80"] = *r.episodes_to_80;
  else j["episodes_to_80"] = nullptr;
  json curve = json::array();
  for (const auto& p : r.curve) curve.push_back({{"episode", p.episode}, {"success", p.success}});
  j["curve"] = std::move(curve);
  return j.dump(2);
}

RunReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunReport r;
    r.task_id = j.at("task").get<std::string>();
    r.method = j.value("method", std::string("bopt"));
    r.modality = j.at("modality").get<std::string>();
    r.k = j.at("k").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.j = j.at("j").get<int>();
    r.episode_budget = j.at("budget").get<int>();
    r.eval_episodes = j.at("eval_episodes").get<int>();
    r.initial_success = j.at("initial_success").get<double>();
    r.final_success = j.at("final_success").get<double>();
    if (!j.at("episodes_to_80").is_null()) r.episodes_to_80 = j["episodes_to_80"].get<int>();
    for (const auto& p : j.at("curve"))
      r.curve.push_back({p.at("episode").get<int>(), p.at("success").get<double>()});
    return r;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed report: ") + e.what());
  }
}

void save_report(const RunReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << report_to_json(report) << "\n";
}

RunReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

void cmd_gen_demos(const std::string& task, int n, std::uint64_t seed, const std::string& out,
                   double noise_std, const RolloutConfig& config) {
  if (n < 0) throw std::invalid_argument("demo count must be >= 0");
  const TaskSpec spec =
      task.size() > 5 && task.substr(task.size() - 5) == ".json" ? load_task(task)
                                                                 : builtin_task(task);
  std::vector<Trajectory> demos;
  demos.reserve(n);
  for (int i = 0; i < n; ++i)
    demos.push_back(scripted_expert(spec, split_seed(seed, kDemoTag, i), noise_std, config));
  save_trajectories(out, demos, {spec.task_id, n, static_cast<std::int64_t>(seed)});
}

void cmd_fit(const std::string& demos_path, int k, std::uint64_t seed, const std::string& out) {
  const std::vector<Trajectory> demos = load_trajectories(demos_path);
  GmmPolicy policy = fit_em(demos, k, seed);
  ModelMeta meta;
  meta.seed = static_cast<std::int64_t>(seed);
  meta.source_demos = demos_path;
  GmmPolicy stamped(policy.weights(), policy.means(), policy.covariances(), meta);
  save_model(stamped, out);
}

std::vector<RunReport> cmd_optimize(const ExperimentConfig& config) {
  config.validate();
  const TaskSpec task = resolve_task(config);
  const GmmPolicy policy = load_start_policy(config);
  const UpdateSpec spec = make_update_spec(config, policy);
  const EnvFactory factory = make_env_factory(task);

  std::vector<RunReport> reports;
  for (const std::uint64_t seed : config.seeds) {
    RunReport report = base_report(config, task, policy.components(), seed);

    const std::uint64_t report_seed = split_seed(seed, kReportTag);
    report.initial_success =
        evaluate_policy(policy, factory, config.rollout, report_seed, config.eval_episodes);
    report.curve.push_back({0, report.initial_success});

    OptimizerConfig opt;
    opt.forest = config.forest;
    opt.acquisition = config.acquisition;
    opt.acquisition.log_ei = config.log_ei;

    std::vector<Trajectory> episode_dump;
    const Objective objective = [&](const UpdateVector& update, int run_index) {
      return evaluate_h(policy, update, factory, config.rollout, seed, run_index,
                        config.dump_trajectories ? &episode_dump : nullptr);
    };
    const IncumbentCallback on_incumbent = [&](const Incumbent& incumbent, int episode) {
      double success = 0.0;
      try {
        const GmmPolicy candidate = integrate(policy, incumbent.update);
        success = evaluate_policy(candidate, factory, config.rollout,
                                  split_seed(report_seed, episode), config.eval_episodes);
      } catch (const Rank1RejectedError&) {
        // An unplayable incumbent scores zero, matching its evaluation.
      }
      report.curve.push_back({episode, success});
    };

    OptimizeResult result = optimize(spec, objective, config.episode_budget, config.rollout.j,
                                     opt, seed, on_incumbent);

    finalize_report(report);
    save_observation_log(config.out_prefix + "_seed" + std::to_string(seed) + ".log.jsonl",
                         result.history);
    if (config.dump_trajectories) {
      save_trajectories(config.out_prefix + "_seed" + std::to_string(seed) + ".episodes.jsonl",
                        episode_dump,
                        {task.task_id, static_cast<int>(episode_dump.size()),
                         static_cast<std::int64_t>(seed)});
    }
    save_report(report, config.out_prefix + "_seed" + std::to_string(seed) + ".report.json");
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<RunReport> cmd_baseline_online(const ExperimentConfig& config) {
  config.validate();
  if (config.demos_path.empty())
    throw std::invalid_argument("online baseline needs a demos file");
  const TaskSpec task = resolve_task(config);
  const GmmPolicy initial_policy = load_start_policy(config);
  const std::vector<Trajectory> demos = load_trajectories(config.demos_path);
  const EnvFactory factory = make_env_factory(task);

  EmConfig refit;
  refit.max_iter = 20;
  refit.restarts = 1;

  std::vector<RunReport> reports;
  for (const std::uint64_t seed : config.seeds) {
    RunReport report = base_report(config, task, initial_policy.components(), seed);
    report.method = "online";
    report.modality = "refit";

    const std::uint64_t report_seed = split_seed(seed, kReportTag);
    report.initial_success = evaluate_policy(initial_policy, factory, config.rollout,
                                             report_seed, config.eval_episodes);
    report.curve.push_back({0, report.initial_success});

    std::ofstream log(config.out_prefix + "_seed" + std::to_string(seed) + ".log.jsonl");
    if (!log) throw std::runtime_error("cannot open log for writing");

    GmmPolicy policy = initial_policy;
    std::vector<Trajectory> dataset = demos;  // Xi_D, grown by successful rollouts
    const int rounds = config.episode_budget / config.rollout.j;
    for (int round = 0; round < rounds; ++round) {
      int successes = 0;
      for (int e = 0; e < config.rollout.j; ++e) {
        const std::uint64_t episode_seed = split_seed(split_seed(seed, kOnlineTag, round), e);
        auto env = factory(episode_seed);
        RolloutResult r =
            rollout(policy, *env, config.rollout, static_cast<std::int64_t>(episode_seed));
        if (r.reward == 1) {
          dataset.push_back(std::move(r.trajectory));
          ++successes;
        }
      }
      try {
        policy = fit_em_warm(policy, dataset, refit);
      } catch (const std::exception&) {
        // Keep the previous policy when the refit degenerates.
      }
      const int episodes_consumed = (round + 1) * config.rollout.j;
      const double success = evaluate_policy(policy, factory, config.rollout,
                                             split_seed(report_seed, episodes_consumed),
                                             config.eval_episodes);
      report.curve.push_back({episodes_consumed, success});
      nlohmann::ordered_json line;
      line["round"] = round;
      line["episodes"] = episodes_consumed;
      line["successes"] = successes;
      line["dataset_size"] = dataset.size();
      line["reported_success"] = success;
      log << line.dump() << "\n";
    }

    finalize_report(report);
    save_report(report, config.out_prefix + "_seed" + std::to_string(seed) + ".report.json");
    reports.push_back(std::move(report));
  }
  return reports;
}

void cmd_report(const std::vector<std::string>& report_paths, const std::string& out_prefix) {
  if (report_paths.empty()) throw std::invalid_argument("no report files given");
  std::vector<RunReport> reports;
  reports.reserve(report_paths.size());
  for (const auto& path : report_paths) reports.push_back(load_report(path));

  // Group curves by (task, method, modality); mean curves live on the union
  // episode grid with per-seed values carried forward.
  std::map<std::string, std::vector<const RunReport*>> groups;
  for (const auto& r : reports)
    groups[r.task_id + "/" + r.method + "/" + r.modality].push_back(&r);

  std::ofstream csv(out_prefix + "_curves.csv");
  if (!csv) throw std::runtime_error("cannot open for writing: " + out_prefix + "_curves.csv");
  csv << "task,method,modality,episode,mean_success,n_seeds\n";

  json summary = json::array();
  for (const auto& [key, members] : groups) {
    std::set<int> grid;
    for (const auto* r : members)
      for (const auto& p : r->curve) grid.insert(p.episode);

    const RunReport& head = *members.front();
    for (const int episode : grid) {
      double total = 0.0;
      for (const auto* r : members) {
        double value = r->curve.front().success;
        for (const auto& p : r->curve) {
          if (p.episode <= episode) value = p.success;
          else break;
        }
        total += value;
      }
      csv << head.task_id << "," << head.method << "," << head.modality << "," << episode << ","
          << total / members.size() << "," << members.size() << "\n";
    }

    double final_total = 0.0, initial_total = 0.0, achieved_total = 0.0;
    int achieved = 0;
    for (const auto* r : members) {
      final_total += r->final_success;
      initial_total += r->initial_success;
      if (r->episodes_to_80) {
        achieved_total += *r->episodes_to_80;
        ++achieved;
      }
    }
    json cell;
    cell["task"] = head.task_id;
    cell["method"] = head.method;
    cell["modality"] = head.modality;
    cell["k"] = head.k;
    cell["seeds"] = members.size();
    cell["initial_success_mean"] = initial_total / members.size();
    cell["final_success_mean"] = final_total / members.size();
    if (achieved > 0) cell["episodes_to_80_mean"] = achieved_total / achieved;
    else cell["episodes_to_80_mean"] = nullptr;
    cell["achieved_fraction"] =
        static_cast<double>(achieved) / static_cast<double>(members.size());
    summary.push_back(std::move(cell));
  }

  std::ofstream out(out_prefix + "_summary.json");
  if (!out) throw std::runtime_error("cannot open for writing: " + out_prefix + "_summary.json");
  out << summary.dump(2) << "\n";
}

}  // namespace gmmbo
