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

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gmmbo/gmm.hpp"
#include "gmmbo/rng.hpp"
#include "test_support.hpp"

using namespace gmmbo;

TEST_CASE("gmr with zero cross-covariance returns the velocity mean") {
  const GmmPolicy policy = test::single_component(
      Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 0, 0), Eigen::Matrix3d::Identity(),
      Eigen::Matrix3d::Zero());
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d s = test::random_vector3(rng, 2.0);
    CHECK((policy.gmr(s) - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
  }
}

TEST_CASE("gmr with negated identity cross block is a global attractor") {
  // A = cov_sdot_s * cov_ss^-1 = -I, b = 0, so gmr(s) = -s.
  const GmmPolicy policy = test::single_component(
      Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(0, 0, 0), Eigen::Matrix3d::Identity(),
      -Eigen::Matrix3d::Identity());
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d s = test::random_vector3(rng, 2.0);
    CHECK((policy.gmr(s) + s).norm() < 1e-12);
  }
}

TEST_CASE("single-component gmr matches the affine map exactly") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Matrix3d cov_ss = test::random_spd3(rng);
    const Eigen::Matrix3d cov_sdot_s = test::random_matrix3(rng, 0.3);
    const Eigen::Vector3d mu_s = test::random_vector3(rng, 1.0);
    const Eigen::Vector3d mu_sdot = test::random_vector3(rng, 0.5);
    const GmmPolicy policy = test::single_component(mu_s, mu_sdot, cov_ss, cov_sdot_s);

    const Eigen::Matrix3d a = cov_sdot_s * cov_ss.inverse();
    const Eigen::Vector3d b = mu_sdot - a * mu_s;
    const Eigen::Vector3d s = test::random_vector3(rng, 1.5);
    CHECK((policy.gmr(s) - (a * s + b)).norm() < 1e-12);
    CHECK(policy.log_responsibilities(s)[0] == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("mirror-symmetric components split responsibilities evenly") {
  const GmmPolicy policy = test::mirrored_pair();
  Rng rng(6);
  for (int i = 0; i < 25; ++i) {
    // Query points on the mirror plane x = 0.
    Eigen::Vector3d s = test::random_vector3(rng, 1.0);
    s.x() = 0.0;
    const Eigen::VectorXd log_h = policy.log_responsibilities(s);
    CHECK(std::abs(std::exp(log_h[0]) - 0.5) < 1e-12);
    CHECK(std::abs(std::exp(log_h[1]) - 0.5) < 1e-12);
  }
}

TEST_CASE("far-field query is dominated by the nearest component") {
  const GmmPolicy policy = test::mirrored_pair();  // means at x = +-1
  const Eigen::Vector3d s(6.0, 0.0, 0.0);
  const Eigen::VectorXd log_h = policy.log_responsibilities(s);
  CHECK(std::exp(log_h[0]) > 0.999);  // component at +1
}

TEST_CASE("responsibilities form a probability simplex everywhere") {
  Rng rng(7);
  const GmmPolicy policy = test::random_policy(rng, 4);
  for (int i = 0; i < 200; ++i) {
    const Eigen::VectorXd log_h = policy.log_responsibilities(test::random_vector3(rng, 3.0));
    double sum = 0.0;
    for (int c = 0; c < policy.components(); ++c) {
      const double h = std::exp(log_h[c]);
      CHECK(h >= 0.0);
      sum += h;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("gmr is a convex recombination of component predictions") {
  Rng rng(8);
  const GmmPolicy policy = test::random_policy(rng, 5);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d s = test::random_vector3(rng, 2.0);
    const Eigen::VectorXd log_h = policy.log_responsibilities(s);
    Eigen::Vector3d recombined = Eigen::Vector3d::Zero();
    double max_norm = 0.0;
    for (int c = 0; c < policy.components(); ++c) {
      const Eigen::Vector3d pred =
          policy.regression_matrix(c) * s + policy.regression_offset(c);
      recombined += std::exp(log_h[c]) * pred;
      max_norm = std::max(max_norm, pred.norm());
    }
    CHECK((policy.gmr(s) - recombined).norm() < 1e-12);
    CHECK(policy.gmr(s).norm() <= max_norm + 1e-12);
  }
}

TEST_CASE("gmr rejects non-finite input") {
  const GmmPolicy policy = test::mirrored_pair();
  Eigen::Vector3d s(0.0, std::numeric_limits<double>::quiet_NaN(), 0.0);
  CHECK_THROWS_WITH_AS(policy.gmr(s), "invalid state", std::invalid_argument);
}

TEST_CASE("policy construction validates invariants") {
  const GmmPolicy good = test::mirrored_pair();
  Eigen::VectorXd bad_weights = good.weights();
  bad_weights[0] = 0.4;  // sums to 0.9
  CHECK_THROWS_AS(GmmPolicy(bad_weights, good.means(), good.covariances()),
                  std::invalid_argument);

  auto asym = good.covariances();
  asym[0](0, 1) += 1e-3;
  CHECK_THROWS_AS(GmmPolicy(good.weights(), good.means(), asym), std::invalid_argument);

  auto not_pd = good.covariances();
  not_pd[0].topLeftCorner(3, 3) = -Eigen::Matrix3d::Identity();
  CHECK_THROWS_AS(GmmPolicy(good.weights(), good.means(), not_pd), std::invalid_argument);
}

TEST_CASE("fit_em recovers a constant velocity with one component") {
  Trajectory traj;
  traj.task_id = "line";
  const Eigen::Vector3d v(0.2, -0.1, 0.05);
  for (int i = 0; i < 50; ++i) {
    TrajectoryStep step;
    step.t = 0.05 * i;
    step.s = Eigen::Vector3d(0.05 * i * v);
    step.s_dot = v;
    traj.steps.push_back(step);
  }
  const GmmPolicy policy = fit_em({traj}, 1, 11);
  CHECK((policy.mean_sdot(0) - v).norm() < 1e-6);
}

TEST_CASE("fit_em reports insufficient data when k exceeds the sample count") {
  Trajectory traj;
  traj.task_id = "tiny";
  for (int i = 0; i < 3; ++i)
    traj.steps.push_back({0.1 * i, Eigen::Vector3d(i, 0, 0), Eigen::Vector3d(1, 0, 0)});
  CHECK_THROWS_WITH_AS(fit_em({traj}, 5, 1), "insufficient data", std::runtime_error);
}

TEST_CASE("fit_em recovers a known two-component mixture") {
  // Two components over a 2-D joint space: 11 free parameters, so the
  // maximum-likelihood estimate from 500 samples sits well inside the
  // 0.05 nats/sample margin.
  Eigen::VectorXd w(2);
  w << 0.6, 0.4;
  std::vector<Eigen::VectorXd> means(2, Eigen::VectorXd::Zero(2));
  means[0] << 0.0, 0.3;
  means[1] << 1.5, -0.3;
  std::vector<Eigen::MatrixXd> covs(2);
  covs[0] = 0.04 * Eigen::MatrixXd::Identity(2, 2);
  covs[1] = 0.09 * Eigen::MatrixXd::Identity(2, 2);
  const GmmPolicy generator(w, means, covs);

  Rng rng(12);
  const std::vector<Trajectory> train = {test::sample_as_trajectory(generator, 500, rng)};
  const std::vector<Eigen::VectorXd> held_out = test::sample_joint(generator, 2000, rng);

  const GmmPolicy fitted = fit_em(train, 2, 13);
  const double gen_ll = test::mean_log_likelihood(generator, held_out);
  const double fit_ll = test::mean_log_likelihood(fitted, held_out);
  CHECK(fit_ll >= gen_ll - 0.05);
}

TEST_CASE("EM log-likelihood is monotone over iterations") {
  Rng rng(14);
  for (int trial = 0; trial < 5; ++trial) {
    const GmmPolicy generator = test::random_policy(rng, 3);
    const std::vector<Trajectory> data = {test::sample_as_trajectory(generator, 300, rng)};
    const EmResult result = fit_em_detailed(data, 3, 100 + trial);
    REQUIRE(result.policy.has_value());
    for (const auto& history : result.restart_log_likelihoods) {
      for (std::size_t i = 1; i < history.size(); ++i)
        CHECK(history[i] >= history[i - 1] - 1e-9);
    }
  }
}

TEST_CASE("model serialization round-trips exactly") {
  Rng rng(15);
  const GmmPolicy policy = test::random_policy(rng, 3);
  const std::string path = test::temp_path("model_roundtrip.json");
  save_model(policy, path);
  const GmmPolicy loaded = load_model(path);

  CHECK(loaded.components() == policy.components());
  CHECK(loaded.weights() == policy.weights());  // bitwise
  for (int c = 0; c < policy.components(); ++c) {
    CHECK(loaded.means()[c] == policy.means()[c]);
    CHECK(loaded.covariances()[c] == policy.covariances()[c]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("model load rejects invariant violations") {
  Rng rng(16);
  const GmmPolicy policy = test::random_policy(rng, 2);
  std::string text = model_to_json(policy);

  SUBCASE("weights off the simplex") {
    auto j = nlohmann::json::parse(text);
    j["weights"][0] = j["weights"][0].get<double>() - 0.1;
    CHECK_THROWS_AS(model_from_json(j.dump()), std::invalid_argument);
  }
  SUBCASE("asymmetric covariance") {
    auto j = nlohmann::json::parse(text);
    j["covariances"][0][1] = j["covariances"][0][1].get<double>() + 0.05;
    CHECK_THROWS_AS(model_from_json(j.dump()), std::invalid_argument);
  }
  SUBCASE("garbage input") {
    CHECK_THROWS_AS(model_from_json("{not json"), std::runtime_error);
  }
}

TEST_CASE("trajectory file round trip with meta header") {
  Rng rng(17);
  std::vector<Trajectory> trajectories;
  for (int t = 0; t < 3; ++t) {
    Trajectory traj;
    traj.task_id = "demo";
    traj.seed = 40 + t;
    traj.success = t % 2 == 0;
    for (int i = 0; i < 5; ++i)
      traj.steps.push_back(
          {0.05 * i, test::random_vector3(rng, 1.0), test::random_vector3(rng, 0.3)});
    trajectories.push_back(std::move(traj));
  }
  const std::string path = test::temp_path("trajectories.jsonl");
  save_trajectories(path, trajectories, {"demo", 3, 99});

  TrajectoryFileMeta meta;
  const std::vector<Trajectory> loaded = load_trajectories(path, &meta);
  CHECK(meta.task_id == "demo");
  CHECK(meta.count == 3);
  CHECK(meta.seed == 99);
  REQUIRE(loaded.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(loaded[t].seed == trajectories[t].seed);
    CHECK(loaded[t].success == trajectories[t].success);
    REQUIRE(loaded[t].steps.size() == trajectories[t].steps.size());
    for (std::size_t i = 0; i < loaded[t].steps.size(); ++i) {
      CHECK(loaded[t].steps[i].s == trajectories[t].steps[i].s);
      CHECK(loaded[t].steps[i].s_dot == trajectories[t].steps[i].s_dot);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("trajectory validation rejects non-increasing timestamps") {
  Trajectory traj;
  traj.steps.push_back({0.1, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()});
  traj.steps.push_back({0.1, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero()});
  CHECK_THROWS_AS(traj.validate(), std::invalid_argument);
}

TEST_CASE("finite differences are exact on quadratic paths") {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> positions;
  for (int i = 0; i < 20; ++i) {
    const double t = 0.05 * i;
    times.push_back(t);
    positions.push_back(Eigen::Vector3d(t * t, 2 * t, 1.0 - t * t));
  }
  const auto velocities = finite_difference_velocities(times, positions);
  for (std::size_t i = 1; i + 1 < positions.size(); ++i) {
    const double t = times[i];
    CHECK((velocities[i] - Eigen::Vector3d(2 * t, 2.0, -2 * t)).norm() < 1e-9);
  }
}

TEST_CASE("responsibility underflow falls back to uniform and counts") {
  const GmmPolicy policy = test::mirrored_pair();
  CHECK(policy.responsibility_underflow_count() == 0);
  // Far enough that every component's quadratic form overflows to -inf.
  const Eigen::Vector3d s(1e200, 0.0, 0.0);
  const Eigen::VectorXd log_h = policy.log_responsibilities(s);
  for (int c = 0; c < 2; ++c) CHECK(log_h[c] == doctest::Approx(std::log(0.5)));
  CHECK(policy.responsibility_underflow_count() == 1);
}
