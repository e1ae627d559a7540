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

#include "gmmbo/updates.hpp"

#include <atomic>
#include <cmath>

#include <json.hpp>

namespace gmmbo {
namespace {

using json = nlohmann::ordered_json;

std::atomic<std::uint64_t> g_rank1_rejections{0};

const char* cov_update_name(CovUpdate cov) {
  switch (cov) {
    case CovUpdate::kEig: return "cov_eig";
    case CovUpdate::kRot: return "cov_rot";
    case CovUpdate::kRank1: return "cov_rank1";
    case CovUpdate::kNone: break;
  }
  return "";
}

}  // namespace

void UpdateSpec::validate() const {
  if (k < 1 || dim_s < 1) throw std::invalid_argument("update spec needs k >= 1 and dim_s >= 1");
  if (!weights && !means && cov == CovUpdate::kNone)
    throw std::invalid_argument("update spec selects no modality");
  if (weight_bound <= 0.0 || mean_bound <= 0.0 || cov_sigma <= 0.0 || epsilon <= 0.0)
    throw std::invalid_argument("update bounds must be strictly positive");
  if (cov == CovUpdate::kEig && cov_sigma >= 1.0)
    throw std::invalid_argument("eigenvalue update needs sigma < 1");
  if (cov == CovUpdate::kRot && dim_s != 3)
    throw std::invalid_argument("rotation update requires 3-D state");
}

int UpdateSpec::per_component_dimension() const {
  return (weights ? 1 : 0) + (means ? 2 * dim_s : 0) + (cov != CovUpdate::kNone ? dim_s : 0);
}

int UpdateSpec::cov_offset() const {
  if (cov == CovUpdate::kNone) return -1;
  return (weights ? 1 : 0) + (means ? 2 * dim_s : 0);
}

int dimension(const UpdateSpec& spec) {
  spec.validate();
  return spec.k * spec.per_component_dimension();
}

UpdateVector::UpdateVector(UpdateSpec spec, Eigen::VectorXd values) {
  spec.validate();
  if (values.size() != dimension(spec))
    throw std::invalid_argument("update vector length does not match spec dimension");
  const int block = spec.per_component_dimension();
  for (int c = 0; c < spec.k; ++c) {
    const int base = c * block;
    if (spec.weights && std::abs(values[base + spec.weight_offset()]) > spec.weight_bound)
      throw std::invalid_argument("weight delta out of bounds");
    if (spec.means) {
      for (int i = 0; i < 2 * spec.dim_s; ++i)
        if (std::abs(values[base + spec.mean_offset() + i]) > spec.mean_bound)
          throw std::invalid_argument("mean delta out of bounds");
    }
    if (spec.cov != CovUpdate::kNone) {
      for (int i = 0; i < spec.dim_s; ++i)
        if (std::abs(values[base + spec.cov_offset() + i]) > spec.cov_sigma)
          throw std::invalid_argument("covariance parameter out of bounds");
    }
  }
  spec_ = std::move(spec);
  values_ = std::move(values);
}

UpdateVector UpdateVector::unchecked(UpdateSpec spec, Eigen::VectorXd values) {
  spec.validate();
  if (values.size() != dimension(spec))
    throw std::invalid_argument("update vector length does not match spec dimension");
  UpdateVector u;
  u.spec_ = std::move(spec);
  u.values_ = std::move(values);
  return u;
}

UpdateVector UpdateVector::zero(const UpdateSpec& spec) {
  return UpdateVector(spec, Eigen::VectorXd::Zero(dimension(spec)));
}

double UpdateVector::weight_delta(int component) const {
  if (!spec_.weights) return 0.0;
  return values_[component * spec_.per_component_dimension() + spec_.weight_offset()];
}

Eigen::VectorXd UpdateVector::mean_delta(int component) const {
  if (!spec_.means) return Eigen::VectorXd::Zero(2 * spec_.dim_s);
  return values_.segment(component * spec_.per_component_dimension() + spec_.mean_offset(),
                         2 * spec_.dim_s);
}

Eigen::VectorXd UpdateVector::cov_params(int component) const {
  if (spec_.cov == CovUpdate::kNone) return Eigen::VectorXd::Zero(spec_.dim_s);
  return values_.segment(component * spec_.per_component_dimension() + spec_.cov_offset(),
                         spec_.dim_s);
}

std::string update_to_json(const UpdateVector& update) {
  const UpdateSpec& spec = update.spec();
  json modalities = json::array();
  if (spec.weights) modalities.push_back("weights");
  if (spec.means) modalities.push_back("means");
  if (spec.cov != CovUpdate::kNone) modalities.push_back(cov_update_name(spec.cov));
  json j;
  j["spec"] = {{"modalities", modalities},
               {"k", spec.k},
               {"dim_s", spec.dim_s},
               {"bounds",
                {{"weights", spec.weight_bound},
                 {"means", spec.mean_bound},
                 {"cov_sigma", spec.cov_sigma}}},
               {"epsilon", spec.epsilon}};
  json vals = json::array();
  for (int i = 0; i < update.values().size(); ++i) vals.push_back(update.values()[i]);
  j["values"] = std::move(vals);
  return j.dump();
}

UpdateVector update_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    const json& s = j.at("spec");
    UpdateSpec spec;
    for (const auto& m : s.at("modalities")) {
      const std::string name = m.get<std::string>();
      if (name == "weights") spec.weights = true;
      else if (name == "means") spec.means = true;
      else if (name == "cov_eig") spec.cov = CovUpdate::kEig;
      else if (name == "cov_rot") spec.cov = CovUpdate::kRot;
      else if (name == "cov_rank1") spec.cov = CovUpdate::kRank1;
      else throw std::runtime_error("unknown modality: " + name);
    }
    spec.k = s.at("k").get<int>();
    spec.dim_s = s.at("dim_s").get<int>();
    spec.weight_bound = s.at("bounds").at("weights").get<double>();
    spec.mean_bound = s.at("bounds").at("means").get<double>();
    spec.cov_sigma = s.at("bounds").at("cov_sigma").get<double>();
    spec.epsilon = s.at("epsilon").get<double>();
    Eigen::VectorXd values(j.at("values").size());
    for (std::size_t i = 0; i < j.at("values").size(); ++i)
      values[static_cast<int>(i)] = j["values"][i].get<double>();
    return UpdateVector(std::move(spec), std::move(values));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed update vector: ") + e.what());
  }
}

Eigen::VectorXd apply_weights(const Eigen::VectorXd& weights, const Eigen::VectorXd& delta,
                              double epsilon) {
  Eigen::VectorXd floored = (weights + delta).cwiseMax(epsilon);
  return floored / floored.sum();
}

Eigen::MatrixXd apply_cov_eig(const Eigen::MatrixXd& cov, const Eigen::VectorXd& factors) {
  const int n = static_cast<int>(cov.rows());
  if (factors.size() != n) throw std::invalid_argument("factor count must match matrix size");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("eigenvalue update needs a positive-definite matrix");
  // Factors pair against the eigenvalues in descending order; exact ties are
  // broken by the eigenvector's dominant axis so the parameter-to-axis
  // mapping is deterministic.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  const auto dominant_axis = [&](int i) {
    int axis = 0;
    es.eigenvectors().col(i).cwiseAbs().maxCoeff(&axis);
    return axis;
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (es.eigenvalues()[a] != es.eigenvalues()[b])
      return es.eigenvalues()[a] > es.eigenvalues()[b];
    return dominant_axis(a) < dominant_axis(b);
  });
  Eigen::VectorXd scaled = es.eigenvalues();
  for (int i = 0; i < n; ++i) scaled[order[i]] = es.eigenvalues()[order[i]] * factors[i];
  return es.eigenvectors() * scaled.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::Matrix3d euler_xyz(const Eigen::Vector3d& angles) {
  return (Eigen::AngleAxisd(angles[0], Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(angles[1], Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(angles[2], Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

Eigen::MatrixXd apply_cov_rot(const Eigen::MatrixXd& cov_sdot_s, const Eigen::Vector3d& angles) {
  if (cov_sdot_s.rows() != 3 || cov_sdot_s.cols() != 3)
    throw std::invalid_argument("rotation update requires 3-D state");
  return euler_xyz(angles) * cov_sdot_s;
}

Eigen::MatrixXd apply_cov_rank1(const Eigen::MatrixXd& cov, const Eigen::VectorXd& factors) {
  const int n = static_cast<int>(cov.rows());
  if (factors.size() != n) throw std::invalid_argument("factor count must match matrix size");
  const Eigen::MatrixXd diag = cov.diagonal().asDiagonal();
  const Eigen::MatrixXd off = cov - diag;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(off, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd u1 = svd.matrixU().col(0);
  const Eigen::VectorXd v1 = svd.matrixV().col(0);
  const double s1 = svd.singularValues()[0];
  return diag + u1 * s1 * (v1.cwiseProduct(factors)).transpose();
}

GmmPolicy integrate(const GmmPolicy& policy, const UpdateVector& update) {
  const UpdateSpec& spec = update.spec();
  if (spec.k != policy.components() || spec.dim_s != policy.dim_s())
    throw std::invalid_argument("update spec does not match policy shape");

  const int m = spec.dim_s;
  Eigen::VectorXd weights = policy.weights();
  std::vector<Eigen::VectorXd> means = policy.means();
  std::vector<Eigen::MatrixXd> covs = policy.covariances();

  if (spec.weights) {
    Eigen::VectorXd delta(spec.k);
    for (int c = 0; c < spec.k; ++c) delta[c] = update.weight_delta(c);
    weights = apply_weights(weights, delta, spec.epsilon);
  }
  if (spec.means) {
    for (int c = 0; c < spec.k; ++c) means[c] += update.mean_delta(c);
  }
  switch (spec.cov) {
    case CovUpdate::kNone:
      break;
    case CovUpdate::kEig:
      for (int c = 0; c < spec.k; ++c) {
        const Eigen::VectorXd factors = update.cov_params(c).array() + 1.0;
        covs[c].topLeftCorner(m, m) = apply_cov_eig(covs[c].topLeftCorner(m, m), factors);
      }
      break;
    case CovUpdate::kRot:
      for (int c = 0; c < spec.k; ++c) {
        const Eigen::MatrixXd rotated =
            apply_cov_rot(covs[c].bottomLeftCorner(m, m), update.cov_params(c));
        covs[c].bottomLeftCorner(m, m) = rotated;
        covs[c].topRightCorner(m, m) = rotated.transpose();
      }
      break;
    case CovUpdate::kRank1:
      for (int c = 0; c < spec.k; ++c) {
        const Eigen::VectorXd factors = update.cov_params(c).array() + 1.0;
        const Eigen::MatrixXd raw = apply_cov_rank1(covs[c].topLeftCorner(m, m), factors);
        const Eigen::MatrixXd sym = 0.5 * (raw + raw.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
        if (es.eigenvalues().minCoeff() <= 0.0) {
          g_rank1_rejections.fetch_add(1);
          throw Rank1RejectedError();
        }
        covs[c].topLeftCorner(m, m) = sym;
      }
      break;
  }

  ModelMeta meta = policy.meta();
  return GmmPolicy(std::move(weights), std::move(means), std::move(covs), std::move(meta));
}

std::uint64_t rank1_rejection_count() { return g_rank1_rejections.load(); }

}  // namespace gmmbo
