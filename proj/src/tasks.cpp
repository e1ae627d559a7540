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

#include "gmmbo/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gmmbo/rng.hpp"
#include "gmmbo/updates.hpp"

namespace gmmbo {
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kExpertTag = 0x65787072;
constexpr std::uint64_t kDegradeTag = 0x64656772;

Eigen::Matrix3d yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

// Signed angle from a to b in the xy plane.
double planar_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.x() * b.y() - a.y() * b.x(), a.x() * b.x() + a.y() * b.y());
}

json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const json& a) {
  if (a.size() != 3) throw std::runtime_error("expected a 3-vector");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

}  // namespace

void TaskSpec::validate() const {
  if (task_id.empty()) throw std::invalid_argument("task needs an id");
  if (gates.empty()) throw std::invalid_argument("task needs at least one gate");
  for (std::size_t i = 0; i < gates.size(); ++i) {
    if ((gates[i].half_extents.array() <= 0.0).any())
      throw std::invalid_argument("gate boxes need positive extents");
    for (std::size_t j = i + 1; j < gates.size(); ++j) {
      const Eigen::Vector3d gap =
          (gates[i].center - gates[j].center).cwiseAbs() -
          (gates[i].half_extents + gates[j].half_extents);
      if ((gap.array() < 0.0).all()) throw std::invalid_argument("gates must be disjoint");
    }
  }
  if (success_threshold <= 0.0) throw std::invalid_argument("threshold must be positive");
  if (tube_radius <= 0.0) throw std::invalid_argument("tube radius must be positive");
  if (std::abs(motion_axis.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("motion axis must be a unit vector");
  if (angular) {
    if (!hinge) throw std::invalid_argument("angular task needs a hinge");
    if ((handle_origin - hinge->center).head<2>().norm() <= 1e-9)
      throw std::invalid_argument("hinge must be offset from the handle");
  }
  if ((start_region.half_extents.array() < 0.0).any())
    throw std::invalid_argument("start region extents must be non-negative");
  if (randomization.yaw < 0.0 || (randomization.translation.array() < 0.0).any())
    throw std::invalid_argument("randomization ranges must be non-negative");
}

Eigen::Vector3d ObjectPose::to_object_frame(const Eigen::Vector3d& world) const {
  return yaw_rotation(-yaw) * (world - translation);
}

Eigen::Vector3d ObjectPose::to_world_frame(const Eigen::Vector3d& object) const {
  return yaw_rotation(yaw) * object + translation;
}

GateSequenceEnv::GateSequenceEnv(TaskSpec spec, ObjectPose pose, const Eigen::Vector3d& start_world)
    : spec_(std::move(spec)), pose_(pose) {
  spec_.validate();
  start_relative_ = pose_.to_object_frame(start_world);
}

GateSequenceEnv GateSequenceEnv::reset(const TaskSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ObjectPose pose;
  for (int i = 0; i < 3; ++i) {
    const double r = spec.randomization.translation[i];
    pose.translation[i] = r > 0.0 ? rng.uniform(-r, r) : 0.0;
  }
  pose.yaw = spec.randomization.yaw > 0.0
                 ? rng.uniform(-spec.randomization.yaw, spec.randomization.yaw)
                 : 0.0;
  Eigen::Vector3d start;
  for (int i = 0; i < 3; ++i) {
    const double h = spec.start_region.half_extents[i];
    start[i] = spec.start_region.center[i] + (h > 0.0 ? rng.uniform(-h, h) : 0.0);
  }
  return GateSequenceEnv(spec, pose, start);
}

StepStatus GateSequenceEnv::step(const Eigen::VectorXd& s_new) {
  if (succeeded_) return StepStatus::kSuccess;
  if (s_new.size() != 3) throw std::invalid_argument("gate tasks are 3-D");
  const Eigen::Vector3d p = s_new;

  if (gate_progress_ < static_cast<int>(spec_.gates.size())) {
    if (spec_.gates[gate_progress_].contains(p)) ++gate_progress_;
  }
  if (gate_progress_ < static_cast<int>(spec_.gates.size())) return StepStatus::kRunning;

  if (!spec_.angular) {
    const Eigen::Vector3d rel = p - spec_.handle_origin;
    const double along = rel.dot(spec_.motion_axis);
    const double off_axis = (rel - along * spec_.motion_axis).norm();
    if (off_axis <= spec_.tube_radius) accrued_ = std::max(accrued_, std::max(along, 0.0));
  } else {
    const Eigen::Vector3d radial0 = spec_.handle_origin - spec_.hinge->center;
    const Eigen::Vector3d q = p - spec_.hinge->center;
    const double radius = radial0.head<2>().norm();
    const double radius_err = q.head<2>().norm() - radius;
    const double z_err = q.z() - radial0.z();
    // Distance to the handle's circular path.
    if (std::sqrt(radius_err * radius_err + z_err * z_err) <= spec_.tube_radius) {
      const double direction = planar_angle(radial0, spec_.motion_axis) >= 0.0 ? 1.0 : -1.0;
      const double angle = direction * planar_angle(radial0, q);
      accrued_ = std::max(accrued_, std::max(angle, 0.0));
    }
  }
  if (accrued_ >= spec_.success_threshold) succeeded_ = true;
  return succeeded_ ? StepStatus::kSuccess : StepStatus::kRunning;
}

EnvFactory make_env_factory(const TaskSpec& spec) {
  return [spec](std::uint64_t seed) {
    return std::make_unique<GateSequenceEnv>(GateSequenceEnv::reset(spec, seed));
  };
}

TaskSpec builtin_task(const std::string& task_id) {
  TaskSpec spec;
  spec.task_id = task_id;
  if (task_id == "slide") {
    // Loop behind the handle, then push the hatch open. Wide gates, wide tube.
    spec.gates = {{{0.10, 0.00, 0.12}, {0.07, 0.09, 0.06}},
                  {{0.00, 0.00, 0.00}, {0.06, 0.08, 0.05}}};
    spec.motion_axis = {-1.0, 0.0, 0.0};
    spec.handle_origin = {0.0, 0.0, 0.0};
    spec.tube_radius = 0.15;
    spec.success_threshold = 0.4;
    spec.randomization = {{0.04, 0.04, 0.02}, 0.10};
    spec.start_region = {{0.15, 0.00, 0.30}, {0.05, 0.05, 0.03}};
  } else if (task_id == "drawer") {
    // Hooking needs precision, pulling is forgiving. The start sits above
    // the handle so the approach does not oppose the pull.
    spec.gates = {{{0.00, 0.00, 0.00}, {0.04, 0.04, 0.04}}};
    spec.motion_axis = {0.0, -1.0, 0.0};
    spec.handle_origin = {0.0, 0.0, 0.0};
    spec.tube_radius = 0.08;
    spec.success_threshold = 0.2;
    spec.randomization = {{0.03, 0.03, 0.015}, 0.08};
    spec.start_region = {{0.00, -0.04, 0.25}, {0.05, 0.04, 0.03}};
  } else if (task_id == "door") {
    // Press the handle straight down, hook it, swing around the hinge.
    // Narrow gates and the tightest tube of the three presets.
    spec.gates = {{{0.00, 0.00, 0.07}, {0.04, 0.04, 0.035}},
                  {{0.00, 0.00, -0.04}, {0.04, 0.04, 0.035}}};
    spec.motion_axis = {-1.0, 0.0, 0.0};
    spec.handle_origin = {0.0, 0.0, -0.04};
    spec.tube_radius = 0.08;
    spec.success_threshold = 25.0 * M_PI / 180.0;
    spec.angular = true;
    spec.hinge = HingeSpec{{0.0, 0.4, -0.04}};
    spec.randomization = {{0.02, 0.02, 0.01}, 0.05};
    spec.start_region = {{0.05, -0.12, 0.20}, {0.04, 0.04, 0.03}};
  } else {
    throw std::invalid_argument("unknown task: " + task_id);
  }
  spec.validate();
  return spec;
}

std::string task_to_json(const TaskSpec& spec) {
  json j;
  j["task_id"] = spec.task_id;
  json gates = json::array();
  for (const auto& gate : spec.gates)
    gates.push_back({{"center", vec3_to_json(gate.center)},
                     {"half_extents", vec3_to_json(gate.half_extents)}});
  j["gates"] = std::move(gates);
  j["motion_axis"] = vec3_to_json(spec.motion_axis);
  j["handle_origin"] = vec3_to_json(spec.handle_origin);
  j["tube_radius"] = spec.tube_radius;
  j["success_threshold"] = spec.success_threshold;
  j["angular"] = spec.angular;
  if (spec.hinge) j["hinge"] = {{"center", vec3_to_json(spec.hinge->center)}};
  j["randomization"] = {{"translation", vec3_to_json(spec.randomization.translation)},
                        {"yaw", spec.randomization.yaw}};
  j["start_region"] = {{"center", vec3_to_json(spec.start_region.center)},
                       {"half_extents", vec3_to_json(spec.start_region.half_extents)}};
  return j.dump(2);
}

TaskSpec task_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TaskSpec spec;
    spec.task_id = j.at("task_id").get<std::string>();
    for (const auto& gate : j.at("gates"))
      spec.gates.push_back(
          {vec3_from_json(gate.at("center")), vec3_from_json(gate.at("half_extents"))});
    spec.motion_axis = vec3_from_json(j.at("motion_axis"));
    spec.handle_origin = vec3_from_json(j.at("handle_origin"));
    spec.tube_radius = j.at("tube_radius").get<double>();
    spec.success_threshold = j.at("success_threshold").get<double>();
    spec.angular = j.value("angular", false);
    if (j.contains("hinge")) spec.hinge = HingeSpec{vec3_from_json(j["hinge"].at("center"))};
    spec.randomization.translation = vec3_from_json(j.at("randomization").at("translation"));
    spec.randomization.yaw = j.at("randomization").at("yaw").get<double>();
    spec.start_region = {vec3_from_json(j.at("start_region").at("center")),
                         vec3_from_json(j.at("start_region").at("half_extents"))};
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed task file: ") + e.what());
  }
}

void save_task(const TaskSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << task_to_json(spec) << "\n";
}

TaskSpec load_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open task file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return task_from_json(ss.str());
}

Trajectory scripted_expert(const TaskSpec& spec, std::uint64_t seed, double noise_std,
                           const RolloutConfig& config) {
  spec.validate();
  config.validate();
  GateSequenceEnv env = GateSequenceEnv::reset(spec, seed);
  Rng rng(split_seed(seed, kExpertTag));

  // Waypoints in the object frame: start, gate centers, handle path.
  std::vector<Eigen::Vector3d> waypoints;
  waypoints.push_back(env.initial_state());
  for (const auto& gate : spec.gates) waypoints.push_back(gate.center);
  const double overshoot = 1.25 * spec.success_threshold;
  if (!spec.angular) {
    for (double frac : {0.25, 0.5, 0.75, 1.0})
      waypoints.push_back(spec.handle_origin + frac * overshoot * spec.motion_axis);
  } else {
    const Eigen::Vector3d radial0 = spec.handle_origin - spec.hinge->center;
    const double direction = planar_angle(radial0, spec.motion_axis) >= 0.0 ? 1.0 : -1.0;
    for (double frac : {0.2, 0.4, 0.6, 0.8, 1.0}) {
      const double angle = direction * frac * overshoot;
      waypoints.push_back(spec.hinge->center + yaw_rotation(angle) * radial0);
    }
  }
  for (std::size_t i = 1; i < waypoints.size(); ++i)
    for (int d = 0; d < 3; ++d) waypoints[i][d] += rng.normal(0.0, noise_std);

  // Constant-speed resampling of the polyline by cumulative arc length.
  const double speed = 0.7 * config.v_max;
  const double step_len = speed * config.dt;
  std::vector<double> cumulative(waypoints.size(), 0.0);
  for (std::size_t i = 1; i < waypoints.size(); ++i)
    cumulative[i] = cumulative[i - 1] + (waypoints[i] - waypoints[i - 1]).norm();
  const double total = cumulative.back();
  const int n_steps = static_cast<int>(std::ceil(total / step_len));
  if (n_steps + 1 > config.max_steps)
    throw std::runtime_error("scripted expert exceeds the step limit");

  std::vector<Eigen::Vector3d> positions;
  positions.reserve(n_steps + 1);
  std::size_t segment = 1;
  for (int i = 0; i <= n_steps; ++i) {
    const double arc = std::min(i * step_len, total);
    while (segment + 1 < waypoints.size() && cumulative[segment] < arc) ++segment;
    const double seg_len = cumulative[segment] - cumulative[segment - 1];
    const double frac = seg_len > 0.0 ? (arc - cumulative[segment - 1]) / seg_len : 0.0;
    positions.push_back(waypoints[segment - 1] +
                        frac * (waypoints[segment] - waypoints[segment - 1]));
  }

  std::vector<double> times(positions.size());
  for (std::size_t i = 0; i < times.size(); ++i) times[i] = static_cast<double>(i) * config.dt;
  const std::vector<Eigen::VectorXd> pos_generic(positions.begin(), positions.end());
  const std::vector<Eigen::VectorXd> velocities = finite_difference_velocities(times, pos_generic);

  // Replay through the success predicate before handing the demo out.
  GateSequenceEnv check(spec, env.pose(), env.pose().to_world_frame(positions.front()));
  bool success = false;
  for (std::size_t i = 1; i < positions.size(); ++i) {
    if (check.step(positions[i]) == StepStatus::kSuccess) {
      success = true;
      break;
    }
  }
  if (!success) throw std::runtime_error("scripted expert failed the success check");

  Trajectory traj;
  traj.task_id = spec.task_id;
  traj.seed = static_cast<std::int64_t>(seed);
  traj.success = true;
  for (std::size_t i = 0; i < positions.size(); ++i)
    traj.steps.push_back({times[i], pos_generic[i], velocities[i]});
  traj.validate();
  return traj;
}

GmmPolicy degrade(const GmmPolicy& policy, double severity, std::uint64_t seed) {
  if (severity < 0.0 || severity >= 10.0)
    throw std::invalid_argument("severity must lie in [0, 10)");
  if (severity == 0.0) return policy;

  Rng rng(split_seed(seed, kDegradeTag));
  const int m = policy.dim_s();
  Eigen::VectorXd weights = policy.weights();
  std::vector<Eigen::VectorXd> means = policy.means();
  std::vector<Eigen::MatrixXd> covs = policy.covariances();
  for (int c = 0; c < policy.components(); ++c) {
    for (int i = 0; i < 2 * m; ++i)
      means[c][i] += rng.uniform(-0.05 * severity, 0.05 * severity);
    Eigen::VectorXd factors(m);
    for (int i = 0; i < m; ++i) factors[i] = rng.uniform(1.0 - 0.1 * severity, 1.0 + 0.1 * severity);
    covs[c].topLeftCorner(m, m) = apply_cov_eig(covs[c].topLeftCorner(m, m), factors);
  }
  return GmmPolicy(std::move(weights), std::move(means), std::move(covs), policy.meta());
}

}  // namespace gmmbo
