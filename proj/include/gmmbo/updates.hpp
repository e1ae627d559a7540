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
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmbo/gmm.hpp"

namespace gmmbo {

// Bounded, low-dimensional update space over a GMM policy and the operator
// that integrates an update vector into a new policy.
//
// Flat vectors are laid out component-major: for each component, first the
// weight delta (if enabled), then the 2*dim_s mean delta, then dim_s
// covariance parameters. Covariance parameters are stored centered in
// [-sigma, sigma]; eigenvalue and rank-1 entries act as multiplicative
// factors 1 + x, rotation entries as Euler angles in radians.

enum class CovUpdate { kNone, kEig, kRot, kRank1 };

struct UpdateSpec {
  bool weights = false;
  bool means = false;
  CovUpdate cov = CovUpdate::kNone;

  double weight_bound = 0.1;
  double mean_bound = 0.05;
  double cov_sigma = 0.1;
  double epsilon = 1e-3;  // weight floor

  int k = 0;
  int dim_s = 3;

  // Throws std::invalid_argument on non-positive bounds, sigma >= 1, or a
  // rotation update with dim_s != 3.
  void validate() const;

  int per_component_dimension() const;
  // Offsets of the three slices inside one component block; -1 if absent.
  int weight_offset() const { return weights ? 0 : -1; }
  int mean_offset() const { return means ? (weights ? 1 : 0) : -1; }
  int cov_offset() const;

  bool operator==(const UpdateSpec&) const = default;
};

// Total flat dimension of the update space.
int dimension(const UpdateSpec& spec);

class UpdateVector {
 public:
  // Validates every entry against its modality bound.
  UpdateVector(UpdateSpec spec, Eigen::VectorXd values);

  // Test-only escape hatch that skips the bound checks.
  static UpdateVector unchecked(UpdateSpec spec, Eigen::VectorXd values);

  static UpdateVector zero(const UpdateSpec& spec);

  const UpdateSpec& spec() const { return spec_; }
  const Eigen::VectorXd& values() const { return values_; }

  double weight_delta(int component) const;
  Eigen::VectorXd mean_delta(int component) const;
  Eigen::VectorXd cov_params(int component) const;

 private:
  UpdateVector() = default;
  UpdateSpec spec_;
  Eigen::VectorXd values_;
};

std::string update_to_json(const UpdateVector& update);
UpdateVector update_from_json(const std::string& text);

// Thrown when a rank-1 covariance update leaves a position block that is not
// positive definite after re-symmetrization. Episode-level failure signal.
struct Rank1RejectedError : std::runtime_error {
  Rank1RejectedError() : std::runtime_error("rank1 update rejected") {}
};

// Norm-preserving weight update with minimum activation floor:
// w_i = max(w_i + dw_i, eps) / sum_j max(w_j + dw_j, eps).
Eigen::VectorXd apply_weights(const Eigen::VectorXd& weights, const Eigen::VectorXd& delta,
                              double epsilon);

// Scales the eigenvalues of a symmetric PD matrix (eigenvalues paired to
// factors in descending order) while keeping its eigenvectors.
Eigen::MatrixXd apply_cov_eig(const Eigen::MatrixXd& cov, const Eigen::VectorXd& factors);

// Left-multiplies the velocity-position cross block by the Euler rotation
// R_x(a) R_y(b) R_z(c); singular values are preserved.
Eigen::MatrixXd apply_cov_rot(const Eigen::MatrixXd& cov_sdot_s, const Eigen::Vector3d& angles);

Eigen::Matrix3d euler_xyz(const Eigen::Vector3d& angles);

// Rank-1 off-diagonal update: with M = cov - diag(cov) = U diag(s) V^T,
// returns diag(cov) + U_1 s_1 (V_1 .* factors)^T. The result is generally
// non-symmetric; integrate() re-symmetrizes and rejects non-PD outcomes.
Eigen::MatrixXd apply_cov_rank1(const Eigen::MatrixXd& cov, const Eigen::VectorXd& factors);

// pi' = pi (+) delta. Returns a new policy; the input is never mutated.
// Throws Rank1RejectedError when the rank-1 scheme destroys positive
// definiteness, std::invalid_argument when spec and policy disagree.
GmmPolicy integrate(const GmmPolicy& policy, const UpdateVector& update);

// Running count of rank-1 rejections observed by integrate(), for the
// rejection-rate diagnostic.
std::uint64_t rank1_rejection_count();

}  // namespace gmmbo
