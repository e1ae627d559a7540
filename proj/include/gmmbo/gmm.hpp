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

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gmmbo {

// A joint Gaussian mixture over (s, s_dot) used as a dynamical-system policy.
// Each of the k components carries a weight, a 2*dim_s mean split into
// position and velocity halves, and a 2*dim_s x 2*dim_s covariance whose
// blocks are addressed as
//
//     | cov_ss       cov_s_sdot  |
//     | cov_sdot_s   cov_sdotsdot|
//
// The velocity field is recovered by Gaussian mixture regression:
// s_dot = sum_k h_k(s) (A_k s + b_k) with A_k = cov_sdot_s * cov_ss^-1 and
// b_k = mean_sdot - A_k * mean_s. Only cov_ss and cov_sdot_s enter
// inference; cov_ss must stay positive definite.
//
// Instances are immutable after construction and safe to share across
// concurrent rollouts.

struct ModelMeta {
  std::int64_t seed = 0;
  std::string created;
  std::string source_demos;
};

class GmmPolicy {
 public:
  // Validates all invariants (weights on the simplex within 1e-9, symmetric
  // covariances, positive-definite position blocks) and precomputes the
  // per-component regression maps. Throws std::invalid_argument on
  // violation.
  GmmPolicy(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
            std::vector<Eigen::MatrixXd> covariances, ModelMeta meta = {});

  int components() const { return static_cast<int>(weights_.size()); }
  int dim_s() const { return dim_s_; }

  const Eigen::VectorXd& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& covariances() const { return covariances_; }
  const ModelMeta& meta() const { return meta_; }

  Eigen::VectorXd mean_s(int k) const { return means_[k].head(dim_s_); }
  Eigen::VectorXd mean_sdot(int k) const { return means_[k].tail(dim_s_); }
  Eigen::MatrixXd cov_ss(int k) const { return covariances_[k].topLeftCorner(dim_s_, dim_s_); }
  Eigen::MatrixXd cov_s_sdot(int k) const { return covariances_[k].topRightCorner(dim_s_, dim_s_); }
  Eigen::MatrixXd cov_sdot_s(int k) const { return covariances_[k].bottomLeftCorner(dim_s_, dim_s_); }
  Eigen::MatrixXd cov_sdot_sdot(int k) const { return covariances_[k].bottomRightCorner(dim_s_, dim_s_); }

  // Cached regression maps, exposed for tests and diagnostics.
  const Eigen::MatrixXd& regression_matrix(int k) const { return a_[k]; }
  const Eigen::VectorXd& regression_offset(int k) const { return b_[k]; }

  // Velocity prediction at state s. Throws std::invalid_argument on
  // non-finite input ("invalid state").
  Eigen::VectorXd gmr(const Eigen::VectorXd& s) const;

  // Log of the normalized responsibilities h_k(s), max-shifted for
  // stability; exp of the result sums to one. If every component density
  // underflows to zero the responsibilities fall back to uniform and a
  // diagnostic counter is bumped.
  Eigen::VectorXd log_responsibilities(const Eigen::VectorXd& s) const;

  std::uint64_t responsibility_underflow_count() const { return underflows_->load(); }

 private:
  int dim_s_;
  Eigen::VectorXd weights_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> covariances_;
  ModelMeta meta_;

  // Per-component cache: A_k, b_k, Cholesky of cov_ss and the Gaussian
  // normalization term log w_k - 0.5 logdet - (m/2) log 2pi.
  std::vector<Eigen::MatrixXd> a_;
  std::vector<Eigen::VectorXd> b_;
  std::vector<Eigen::MatrixXd> chol_ss_;
  Eigen::VectorXd log_norm_;

  // Shared across copies; diagnostic only.
  std::shared_ptr<std::atomic<std::uint64_t>> underflows_;
};

// One recorded episode: demonstration or rollout.
struct TrajectoryStep {
  double t = 0.0;
  Eigen::VectorXd s;
  Eigen::VectorXd s_dot;
};

struct Trajectory {
  std::string task_id;
  std::int64_t seed = 0;
  std::vector<TrajectoryStep> steps;
  bool success = false;

  // Throws if timestamps are not strictly increasing or dimensions disagree.
  void validate() const;
};

// Central finite differences of s over the step timestamps, one-sided at the
// endpoints. Used to derive velocities for demonstration data.
std::vector<Eigen::VectorXd> finite_difference_velocities(
    const std::vector<double>& times, const std::vector<Eigen::VectorXd>& positions);

struct EmConfig {
  double tol = 1e-6;
  int max_iter = 200;
  int restarts = 5;
  double reg_scale = 1e-6;           // ridge: reg_scale * trace/(2 dim_s) * I
  double reseed_mass_fraction = 1e-8;  // components below this * N are re-seeded
  double condition_limit = 1e12;
};

struct EmResult {
  // The policy of the best restart.
  std::optional<GmmPolicy> policy;
  // Log-likelihood per iteration (nats, total over samples) of every restart.
  std::vector<std::vector<double>> restart_log_likelihoods;
  int best_restart = -1;
  int reseed_events = 0;
};

// Expectation-maximization fit of a k-component joint GMM to the pooled
// (s, s_dot) samples of the trajectories. k-means++ seeding, diagonal
// covariance init from cluster scatter, ridge regularization each M-step,
// multiple seeded restarts keeping the best log-likelihood. Throws
// "insufficient data" when the pooled sample count is below k and
// "degenerate component" when every restart collapses.
EmResult fit_em_detailed(const std::vector<Trajectory>& trajectories, int k,
                         std::uint64_t seed, const EmConfig& config = {});
GmmPolicy fit_em(const std::vector<Trajectory>& trajectories, int k, std::uint64_t seed,
                 const EmConfig& config = {});

// Warm-started EM used by the online-refit baseline: continues from the
// given policy's parameters instead of re-seeding.
GmmPolicy fit_em_warm(const GmmPolicy& start, const std::vector<Trajectory>& trajectories,
                      const EmConfig& config = {});

// Model file round trip (JSON; format documented in the README). Load
// re-validates every invariant.
void save_model(const GmmPolicy& policy, const std::string& path);
GmmPolicy load_model(const std::string& path);

std::string model_to_json(const GmmPolicy& policy);
GmmPolicy model_from_json(const std::string& text);

// Trajectory files are JSON lines: a leading {"meta": ...} header followed
// by one trajectory per line.
struct TrajectoryFileMeta {
  std::string task_id;
  int count = 0;
  std::int64_t seed = 0;
};

void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories,
                       const TrajectoryFileMeta& meta);
std::vector<Trajectory> load_trajectories(const std::string& path,
                                          TrajectoryFileMeta* meta_out = nullptr);

std::string trajectory_to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const std::string& line);

}  // namespace gmmbo
