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

#include "gmmbo/updates.hpp"
#include "test_support.hpp"

using namespace gmmbo;

namespace {

UpdateSpec all_modalities_spec(int k, CovUpdate cov = CovUpdate::kEig) {
  UpdateSpec spec;
  spec.weights = true;
  spec.means = true;
  spec.cov = cov;
  spec.k = k;
  spec.dim_s = 3;
  return spec;
}

}  // namespace

TEST_CASE("dimension reproduces the 30/50/70 table") {
  CHECK(dimension(all_modalities_spec(3)) == 30);
  CHECK(dimension(all_modalities_spec(5)) == 50);
  CHECK(dimension(all_modalities_spec(7)) == 70);

  UpdateSpec means_only;
  means_only.means = true;
  means_only.k = 5;
  means_only.dim_s = 3;
  CHECK(dimension(means_only) == 30);
}

TEST_CASE("update spec validation") {
  UpdateSpec spec = all_modalities_spec(3);
  spec.cov_sigma = -0.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  UpdateSpec rot;
  rot.cov = CovUpdate::kRot;
  rot.k = 2;
  rot.dim_s = 2;
  CHECK_THROWS_WITH_AS(rot.validate(), "rotation update requires 3-D state",
                       std::invalid_argument);
}

TEST_CASE("update vector enforces per-modality bounds") {
  UpdateSpec spec = all_modalities_spec(2);
  Eigen::VectorXd values = Eigen::VectorXd::Zero(dimension(spec));
  CHECK_NOTHROW(UpdateVector(spec, values));

  values[0] = 0.11;  // weight bound is 0.1
  CHECK_THROWS_AS(UpdateVector(spec, values), std::invalid_argument);
  values[0] = 0.0;
  values[1] = 0.06;  // mean bound is 0.05
  CHECK_THROWS_AS(UpdateVector(spec, values), std::invalid_argument);
  values[1] = 0.0;
  values[7] = 0.2;  // covariance sigma is 0.1
  CHECK_THROWS_AS(UpdateVector(spec, values), std::invalid_argument);
  CHECK_NOTHROW(UpdateVector::unchecked(spec, values));
}

TEST_CASE("weight update: hand-worked examples") {
  Eigen::VectorXd w(3), dw(3);

  SUBCASE("floor inactive") {
    w << 0.5, 0.3, 0.2;
    dw << 0.1, -0.1, 0.0;
    const Eigen::VectorXd out = apply_weights(w, dw, 0.01);
    CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("floor binds; denominator 0.96") {
    w << 0.05, 0.475, 0.475;
    dw << -0.1, 0.0, 0.0;
    const Eigen::VectorXd out = apply_weights(w, dw, 0.01);
    CHECK(out[0] == doctest::Approx(0.01 / 0.96).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.475 / 0.96).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(0.475 / 0.96).epsilon(1e-12));
  }
  SUBCASE("zero delta is the identity when no entry is floored") {
    w << 0.5, 0.3, 0.2;
    dw.setZero();
    CHECK((apply_weights(w, dw, 0.01) - w).norm() == 0.0);
  }
}

TEST_CASE("weight update stays on the simplex with the floor honored") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_index(6));
    Eigen::VectorXd w(k), dw(k);
    for (int c = 0; c < k; ++c) w[c] = rng.uniform(0.0, 1.0);
    w /= w.sum();
    for (int c = 0; c < k; ++c) dw[c] = rng.uniform(-0.1, 0.1);
    const double eps = 1e-3;
    const Eigen::VectorXd out = apply_weights(w, dw, eps);
    CHECK(std::abs(out.sum() - 1.0) < 1e-9);
    const double denom = (w + dw).cwiseMax(eps).sum();
    CHECK(out.minCoeff() >= eps / denom - 1e-15);
  }
}

TEST_CASE("eigenvalue update: diagonal example") {
  Eigen::Matrix3d cov = Eigen::Vector3d(4.0, 1.0, 1.0).asDiagonal();
  Eigen::Vector3d factors(0.9, 1.1, 1.0);
  const Eigen::MatrixXd out = apply_cov_eig(cov, factors);
  const Eigen::Matrix3d expected = Eigen::Vector3d(3.6, 1.1, 1.0).asDiagonal();
  CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("eigenvalue update: identity factors leave the matrix unchanged") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Matrix3d cov = test::random_spd3(rng);
    const Eigen::MatrixXd out = apply_cov_eig(cov, Eigen::Vector3d::Ones());
    CHECK((out - cov).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("eigenvalue update scales the spectrum and keeps eigenvectors") {
  Rng rng(23);
  const double sigma = 0.1;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Matrix3d cov = test::random_spd3_separated(rng);
    Eigen::Vector3d factors;
    for (int i = 0; i < 3; ++i) factors[i] = rng.uniform(1.0 - sigma, 1.0 + sigma);
    const Eigen::MatrixXd out = apply_cov_eig(cov, factors);

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> in_es(cov);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> out_es(out);
    // Ascending order; factors index the descending order.
    for (int i = 0; i < 3; ++i) {
      const int desc = 2 - i;
      CHECK(out_es.eigenvalues()[i] ==
            doctest::Approx(in_es.eigenvalues()[i] * factors[desc]).epsilon(1e-9));
      const double align =
          std::abs(out_es.eigenvectors().col(i).dot(in_es.eigenvectors().col(i)));
      CHECK(align == doctest::Approx(1.0).epsilon(1e-8));
    }
    CHECK(out_es.eigenvalues().minCoeff() >=
          (1.0 - sigma) * in_es.eigenvalues().minCoeff() - 1e-12);
    CHECK((out - out.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rotation update: zero angles are the identity") {
  Rng rng(24);
  const Eigen::Matrix3d block = test::random_matrix3(rng, 0.7);
  const Eigen::MatrixXd out = apply_cov_rot(block, Eigen::Vector3d::Zero());
  CHECK((out - block).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rotation update composes the regression map with the rotation") {
  // cov_ss = I and cov_sdot_s = I give A = I; rotating by R_z(pi/2) turns
  // the velocity (1,0,0) into (0,1,0).
  const Eigen::MatrixXd rotated =
      apply_cov_rot(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, M_PI / 2));
  const GmmPolicy policy = test::single_component(
      Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity(), rotated);
  const Eigen::Vector3d velocity = policy.gmr(Eigen::Vector3d(1, 0, 0));
  CHECK((velocity - Eigen::Vector3d(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("rotation update preserves singular values") {
  Rng rng(25);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Matrix3d block = test::random_matrix3(rng, 0.8);
    Eigen::Vector3d angles;
    for (int i = 0; i < 3; ++i) angles[i] = rng.uniform(-0.1, 0.1);
    const Eigen::MatrixXd out = apply_cov_rot(block, angles);
    const Eigen::JacobiSVD<Eigen::Matrix3d> in_svd(block);
    const Eigen::JacobiSVD<Eigen::MatrixXd> out_svd(out);
    CHECK((in_svd.singularValues() - out_svd.singularValues()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rank-1 update: reconstruction identities") {
  SUBCASE("rank-1 off-diagonal reconstructs exactly at unit factors") {
    // diag(d) + s1 e1 e2^T has an exactly rank-1 off-diagonal part.
    Eigen::Matrix3d m = Eigen::Vector3d(1.0, 2.0, 3.0).asDiagonal();
    m(0, 1) = 0.7;
    const Eigen::MatrixXd out = apply_cov_rank1(m, Eigen::Vector3d::Ones());
    CHECK((out - m).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("diagonal input is a fixed point for any factors") {
    const Eigen::Matrix3d m = Eigen::Vector3d(1.0, 2.0, 3.0).asDiagonal();
    Rng rng(26);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::Vector3d factors;
      for (int i = 0; i < 3; ++i) factors[i] = rng.uniform(0.9, 1.1);
      const Eigen::MatrixXd out = apply_cov_rank1(m, factors);
      CHECK((out - m).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("truncation error bounded by the singular-value ratio") {
    Rng rng(27);
    for (int trial = 0; trial < 200; ++trial) {
      // Symmetric with a dominant direction in the off-diagonal part.
      const Eigen::Vector3d u = test::random_vector3(rng, 1.0).normalized();
      Eigen::Matrix3d m = 2.0 * u * u.transpose() + 0.01 * test::random_spd3(rng);
      m = 0.5 * (m + m.transpose());
      const Eigen::Matrix3d off = m - Eigen::Matrix3d(m.diagonal().asDiagonal());
      const Eigen::JacobiSVD<Eigen::Matrix3d> svd(off);
      const double s1 = svd.singularValues()[0];
      const double s2 = svd.singularValues()[1];
      const Eigen::MatrixXd out = apply_cov_rank1(m, Eigen::Vector3d::Ones());
      const double err = (out - m).norm() / m.norm();  // Frobenius
      CHECK(err <= s2 / s1 + 1e-12);
    }
  }
}

TEST_CASE("integrate: zero update reproduces the policy") {
  Rng rng(28);
  const GmmPolicy policy = test::random_policy(rng, 3);
  for (CovUpdate cov : {CovUpdate::kEig, CovUpdate::kRot}) {
    UpdateSpec spec = all_modalities_spec(3, cov);
    const GmmPolicy out = integrate(policy, UpdateVector::zero(spec));
    CHECK((out.weights() - policy.weights()).cwiseAbs().maxCoeff() < 1e-12);
    for (int c = 0; c < 3; ++c) {
      CHECK((out.means()[c] - policy.means()[c]).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((out.covariances()[c] - policy.covariances()[c]).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("integrate never mutates its input") {
  Rng rng(29);
  const GmmPolicy policy = test::random_policy(rng, 3);
  const Eigen::VectorXd weights_before = policy.weights();
  const auto means_before = policy.means();
  const auto covs_before = policy.covariances();

  UpdateSpec spec = all_modalities_spec(3, CovUpdate::kEig);
  Rng vrng(30);
  Eigen::VectorXd values(dimension(spec));
  const Eigen::VectorXd bounds_w = weights_before;  // silence unused warnings
  (void)bounds_w;
  for (int i = 0; i < values.size(); ++i) values[i] = vrng.uniform(-0.04, 0.04);
  (void)integrate(policy, UpdateVector(spec, values));

  CHECK(policy.weights() == weights_before);
  for (int c = 0; c < 3; ++c) {
    CHECK(policy.means()[c] == means_before[c]);
    CHECK(policy.covariances()[c] == covs_before[c]);
  }
}

TEST_CASE("weights-only update leaves means and covariances bit-identical") {
  Rng rng(31);
  const GmmPolicy policy = test::random_policy(rng, 4);
  UpdateSpec spec;
  spec.weights = true;
  spec.k = 4;
  spec.dim_s = 3;
  Eigen::VectorXd values(dimension(spec));
  for (int i = 0; i < values.size(); ++i) values[i] = rng.uniform(-0.1, 0.1);
  const GmmPolicy out = integrate(policy, UpdateVector(spec, values));
  for (int c = 0; c < 4; ++c) {
    CHECK(out.means()[c] == policy.means()[c]);
    CHECK(out.covariances()[c] == policy.covariances()[c]);
  }
}

TEST_CASE("mean update adds the delta to the full joint mean") {
  Rng rng(32);
  const GmmPolicy policy = test::random_policy(rng, 2);
  UpdateSpec spec;
  spec.means = true;
  spec.k = 2;
  spec.dim_s = 3;
  Eigen::VectorXd values(dimension(spec));
  for (int i = 0; i < values.size(); ++i) values[i] = rng.uniform(-0.05, 0.05);
  const UpdateVector update(spec, values);
  const GmmPolicy out = integrate(policy, update);
  for (int c = 0; c < 2; ++c)
    CHECK((out.means()[c] - (policy.means()[c] + update.mean_delta(c))).norm() == 0.0);
}

TEST_CASE("rotation update leaves responsibilities invariant") {
  Rng rng(33);
  const GmmPolicy policy = test::random_policy(rng, 3);
  UpdateSpec spec;
  spec.cov = CovUpdate::kRot;
  spec.k = 3;
  spec.dim_s = 3;
  Eigen::VectorXd values(dimension(spec));
  for (int i = 0; i < values.size(); ++i) values[i] = rng.uniform(-0.1, 0.1);
  const GmmPolicy out = integrate(policy, UpdateVector(spec, values));
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d s = test::random_vector3(rng, 2.0);
    CHECK((out.log_responsibilities(s) - policy.log_responsibilities(s)).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("eig update keeps gmr finite on a state grid") {
  Rng rng(34);
  const GmmPolicy policy = test::random_policy(rng, 3);
  UpdateSpec spec;
  spec.cov = CovUpdate::kEig;
  spec.k = 3;
  spec.dim_s = 3;
  Eigen::VectorXd values = Eigen::VectorXd::Constant(dimension(spec), -0.1);
  const GmmPolicy out = integrate(policy, UpdateVector(spec, values));
  for (double x = -2.0; x <= 2.0; x += 0.5)
    for (double y = -2.0; y <= 2.0; y += 0.5)
      for (double z = -2.0; z <= 2.0; z += 0.5)
        CHECK(out.gmr(Eigen::Vector3d(x, y, z)).allFinite());
}

TEST_CASE("updates invert: -mean delta, reciprocal factors, transposed rotation") {
  Rng rng(35);
  for (int trial = 0; trial < 200; ++trial) {
    // Policy with separated cov_ss spectra so that in-range eigenvalue
    // factors cannot reorder the eigenvalues.
    Eigen::VectorXd w(2);
    w << 0.5, 0.5;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
    for (int c = 0; c < 2; ++c) {
      Eigen::VectorXd mean(6);
      mean << test::random_vector3(rng, 1.0), test::random_vector3(rng, 0.4);
      means.push_back(mean);
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(6, 6);
      cov.topLeftCorner(3, 3) = test::random_spd3_separated(rng);
      const Eigen::Matrix3d cross = test::random_matrix3(rng, 0.1);
      cov.bottomLeftCorner(3, 3) = cross;
      cov.topRightCorner(3, 3) = cross.transpose();
      cov.bottomRightCorner(3, 3) = test::random_spd3(rng);
      covs.push_back(cov);
    }
    const GmmPolicy policy(w, means, covs);

    SUBCASE("means") {
      UpdateSpec spec;
      spec.means = true;
      spec.k = 2;
      spec.dim_s = 3;
      Eigen::VectorXd v(dimension(spec));
      for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-0.05, 0.05);
      const GmmPolicy fwd = integrate(policy, UpdateVector(spec, v));
      const GmmPolicy back = integrate(fwd, UpdateVector(spec, -v));
      for (int c = 0; c < 2; ++c)
        CHECK((back.means()[c] - policy.means()[c]).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("eig factors") {
      UpdateSpec spec;
      spec.cov = CovUpdate::kEig;
      spec.k = 2;
      spec.dim_s = 3;
      Eigen::VectorXd v(dimension(spec));
      for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-0.1, 0.1);
      const GmmPolicy fwd = integrate(policy, UpdateVector(spec, v));
      Eigen::VectorXd inverse(v.size());
      for (int i = 0; i < v.size(); ++i) inverse[i] = 1.0 / (1.0 + v[i]) - 1.0;
      const GmmPolicy back = integrate(fwd, UpdateVector::unchecked(spec, inverse));
      for (int c = 0; c < 2; ++c)
        CHECK((back.covariances()[c] - policy.covariances()[c]).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("rotation transpose") {
      UpdateSpec spec;
      spec.cov = CovUpdate::kRot;
      spec.k = 2;
      spec.dim_s = 3;
      Eigen::VectorXd v(dimension(spec));
      for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-0.1, 0.1);
      const GmmPolicy fwd = integrate(policy, UpdateVector(spec, v));
      // R_xyz(a)^T = R_z(-c) R_y(-b) R_x(-a): apply blockwise directly.
      GmmPolicy back = fwd;
      {
        auto covs2 = fwd.covariances();
        for (int c = 0; c < 2; ++c) {
          const Eigen::Matrix3d r = euler_xyz(v.segment<3>(3 * c));
          const Eigen::Matrix3d restored =
              r.transpose() * covs2[c].bottomLeftCorner(3, 3);
          covs2[c].bottomLeftCorner(3, 3) = restored;
          covs2[c].topRightCorner(3, 3) = restored.transpose();
        }
        back = GmmPolicy(fwd.weights(), fwd.means(), covs2);
      }
      for (int c = 0; c < 2; ++c)
        CHECK((back.covariances()[c] - policy.covariances()[c]).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("update vector serialization round trip") {
  UpdateSpec spec = all_modalities_spec(2, CovUpdate::kRot);
  Rng rng(36);
  Eigen::VectorXd values(dimension(spec));
  for (int i = 0; i < values.size(); ++i) values[i] = rng.uniform(-0.04, 0.04);
  const UpdateVector update(spec, values);
  const UpdateVector loaded = update_from_json(update_to_json(update));
  CHECK(loaded.spec() == spec);
  CHECK(loaded.values() == values);
}

TEST_CASE("rank-1 integration rejects non-PD outcomes instead of clamping") {
  // Position block 1 - 0.49 (J - I): the off-diagonal part has its dominant
  // singular direction on the negative eigenvalue -0.98, so the rank-1
  // truncation subtracts mass and scaling by 1.1 pushes the smallest
  // eigenvalue of the re-symmetrized result to 1 - 0.98 * 1.1 < 0.
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(6, 6);
  cov.topLeftCorner(3, 3) << 1.0, -0.49, -0.49, -0.49, 1.0, -0.49, -0.49, -0.49, 1.0;
  Eigen::VectorXd w(1);
  w << 1.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(6);
  const GmmPolicy policy(w, {mean}, {cov});

  UpdateSpec spec;
  spec.cov = CovUpdate::kRank1;
  spec.k = 1;
  spec.dim_s = 3;
  Eigen::VectorXd v(3);
  v << 0.1, 0.1, 0.1;
  bool rejected = false;
  try {
    (void)integrate(policy, UpdateVector(spec, v));
  } catch (const Rank1RejectedError& e) {
    rejected = true;
    CHECK(std::string(e.what()) == "rank1 update rejected");
  }
  CHECK(rejected);
  CHECK(rank1_rejection_count() > 0);
}
