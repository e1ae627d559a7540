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

#include "gmmbo/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gmmbo/rng.hpp"

namespace gmmbo {
namespace {

using json = nlohmann::ordered_json;

constexpr double kSimplexTol = 1e-9;
constexpr double kSymmetryTol = 1e-9;
constexpr double kLog2Pi = 1.8378770664093453;

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (int i = 0; i < v.size(); ++i) acc += std::exp(v[i] - m);
  return m + std::log(acc);
}

Eigen::VectorXd to_vector(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

json from_vector(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

GmmPolicy::GmmPolicy(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                     std::vector<Eigen::MatrixXd> covariances, ModelMeta meta)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      covariances_(std::move(covariances)),
      meta_(std::move(meta)),
      underflows_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
  const int k = static_cast<int>(weights_.size());
  if (k < 1) throw std::invalid_argument("policy needs at least one component");
  if (static_cast<int>(means_.size()) != k || static_cast<int>(covariances_.size()) != k)
    throw std::invalid_argument("component count mismatch between weights, means, covariances");

  const int joint = static_cast<int>(means_[0].size());
  if (joint < 2 || joint % 2 != 0) throw std::invalid_argument("mean dimension must be 2*dim_s");
  dim_s_ = joint / 2;

  if (std::abs(weights_.sum() - 1.0) > kSimplexTol)
    throw std::invalid_argument("weights must sum to 1");
  if (weights_.minCoeff() < 0.0) throw std::invalid_argument("weights must be non-negative");

  a_.resize(k);
  b_.resize(k);
  chol_ss_.resize(k);
  log_norm_.resize(k);
  for (int c = 0; c < k; ++c) {
    if (means_[c].size() != joint) throw std::invalid_argument("inconsistent mean dimension");
    const Eigen::MatrixXd& cov = covariances_[c];
    if (cov.rows() != joint || cov.cols() != joint)
      throw std::invalid_argument("inconsistent covariance shape");
    if (!cov.allFinite() || !means_[c].allFinite())
      throw std::invalid_argument("non-finite policy parameters");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol)
      throw std::invalid_argument("covariance not symmetric");

    const Eigen::MatrixXd ss = cov.topLeftCorner(dim_s_, dim_s_);
    const Eigen::MatrixXd sdot_s = cov.bottomLeftCorner(dim_s_, dim_s_);
    const Eigen::MatrixXd s_sdot = cov.topRightCorner(dim_s_, dim_s_);
    if ((sdot_s - s_sdot.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol)
      throw std::invalid_argument("cross-covariance blocks are not transposes");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (ss + ss.transpose()));
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw std::invalid_argument("position covariance block not positive definite");

    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (ss + ss.transpose()));
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("position covariance block not positive definite");
    chol_ss_[c] = llt.matrixL();

    a_[c] = llt.solve(sdot_s.transpose()).transpose();  // cov_sdot_s * cov_ss^-1
    b_[c] = means_[c].tail(dim_s_) - a_[c] * means_[c].head(dim_s_);

    double log_det = 0.0;
    for (int i = 0; i < dim_s_; ++i) log_det += 2.0 * std::log(chol_ss_[c](i, i));
    const double log_w = weights_[c] > 0.0 ? std::log(weights_[c])
                                           : -std::numeric_limits<double>::infinity();
    log_norm_[c] = log_w - 0.5 * (log_det + dim_s_ * kLog2Pi);
  }
}

Eigen::VectorXd GmmPolicy::log_responsibilities(const Eigen::VectorXd& s) const {
  if (s.size() != dim_s_ || !s.allFinite()) throw std::invalid_argument("invalid state");
  const int k = components();
  Eigen::VectorXd logp(k);
  for (int c = 0; c < k; ++c) {
    const Eigen::VectorXd d = s - means_[c].head(dim_s_);
    const Eigen::VectorXd z =
        chol_ss_[c].triangularView<Eigen::Lower>().solve(d);
    logp[c] = log_norm_[c] - 0.5 * z.squaredNorm();
  }
  const double lse = log_sum_exp(logp);
  if (!std::isfinite(lse)) {
    underflows_->fetch_add(1);
    return Eigen::VectorXd::Constant(k, -std::log(static_cast<double>(k)));
  }
  return logp.array() - lse;
}

Eigen::VectorXd GmmPolicy::gmr(const Eigen::VectorXd& s) const {
  const Eigen::VectorXd log_h = log_responsibilities(s);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_s_);
  for (int c = 0; c < components(); ++c)
    out += std::exp(log_h[c]) * (a_[c] * s + b_[c]);
  return out;
}

void Trajectory::validate() const {
  if (steps.empty()) throw std::invalid_argument("trajectory has no steps");
  const auto dim = steps.front().s.size();
  double prev_t = -std::numeric_limits<double>::infinity();
  for (const auto& step : steps) {
    if (step.s.size() != dim || step.s_dot.size() != dim)
      throw std::invalid_argument("trajectory step dimension mismatch");
    if (!(step.t > prev_t)) throw std::invalid_argument("trajectory timestamps must be strictly increasing");
    prev_t = step.t;
  }
}

std::vector<Eigen::VectorXd> finite_difference_velocities(
    const std::vector<double>& times, const std::vector<Eigen::VectorXd>& positions) {
  const std::size_t n = positions.size();
  if (times.size() != n || n < 2)
    throw std::invalid_argument("finite differences need >= 2 samples with matching timestamps");
  std::vector<Eigen::VectorXd> vel(n);
  vel[0] = (positions[1] - positions[0]) / (times[1] - times[0]);
  for (std::size_t i = 1; i + 1 < n; ++i)
    vel[i] = (positions[i + 1] - positions[i - 1]) / (times[i + 1] - times[i - 1]);
  vel[n - 1] = (positions[n - 1] - positions[n - 2]) / (times[n - 1] - times[n - 2]);
  return vel;
}

namespace {

struct EmState {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
};

// Log density of every sample under every component; returns total
// log-likelihood and fills the responsibility matrix (n x k) and the
// per-sample mixture log-densities.
double e_step(const std::vector<Eigen::VectorXd>& samples, const EmState& st,
              Eigen::MatrixXd& resp, Eigen::VectorXd& sample_log_density) {
  const int n = static_cast<int>(samples.size());
  const int k = static_cast<int>(st.weights.size());
  const int d = static_cast<int>(st.means[0].size());

  std::vector<Eigen::MatrixXd> chol(k);
  Eigen::VectorXd log_norm(k);
  for (int c = 0; c < k; ++c) {
    Eigen::LLT<Eigen::MatrixXd> llt(st.covs[c]);
    if (llt.info() != Eigen::Success) throw std::runtime_error("degenerate component");
    chol[c] = llt.matrixL();
    double log_det = 0.0;
    for (int i = 0; i < d; ++i) log_det += 2.0 * std::log(chol[c](i, i));
    log_norm[c] = (st.weights[c] > 0.0 ? std::log(st.weights[c])
                                       : -std::numeric_limits<double>::infinity()) -
                  0.5 * (log_det + d * kLog2Pi);
  }

  double ll = 0.0;
  Eigen::VectorXd logp(k);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) {
      const Eigen::VectorXd z =
          chol[c].triangularView<Eigen::Lower>().solve(samples[i] - st.means[c]);
      logp[c] = log_norm[c] - 0.5 * z.squaredNorm();
    }
    const double lse = log_sum_exp(logp);
    if (!std::isfinite(lse)) throw std::runtime_error("degenerate component");
    ll += lse;
    sample_log_density[i] = lse;
    for (int c = 0; c < k; ++c) resp(i, c) = std::exp(logp[c] - lse);
  }
  return ll;
}

Eigen::VectorXd global_diag_variance(const std::vector<Eigen::VectorXd>& samples) {
  const int d = static_cast<int>(samples.front().size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& x : samples) mean += x;
  mean /= static_cast<double>(samples.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& x : samples) var += (x - mean).cwiseAbs2();
  var /= static_cast<double>(samples.size());
  return var.cwiseMax(1e-12);
}

EmState init_kmeanspp(const std::vector<Eigen::VectorXd>& samples, int k, Rng& rng) {
  const int n = static_cast<int>(samples.size());
  const int d = static_cast<int>(samples.front().size());
  const Eigen::VectorXd gvar = global_diag_variance(samples);

  std::vector<int> center_idx;
  center_idx.push_back(static_cast<int>(rng.uniform_index(n)));
  Eigen::VectorXd dist2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::max());
  while (static_cast<int>(center_idx.size()) < k) {
    const Eigen::VectorXd& last = samples[center_idx.back()];
    for (int i = 0; i < n; ++i)
      dist2[i] = std::min(dist2[i], (samples[i] - last).squaredNorm());
    const double total = dist2.sum();
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.uniform_index(n));
    } else {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        u -= dist2[i];
        if (u <= 0.0) { pick = i; break; }
      }
    }
    center_idx.push_back(pick);
  }

  std::vector<int> assign(n);
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::max();
    for (int c = 0; c < k; ++c) {
      const double dd = (samples[i] - samples[center_idx[c]]).squaredNorm();
      if (dd < best) { best = dd; assign[i] = c; }
    }
  }

  EmState st;
  st.weights.resize(k);
  st.means.resize(k);
  st.covs.resize(k);
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (assign[i] == c) { mean += samples[i]; ++count; }
    if (count > 0) mean /= static_cast<double>(count);
    for (int i = 0; i < n; ++i)
      if (assign[i] == c) var += (samples[i] - mean).cwiseAbs2();
    if (count > 0) var /= static_cast<double>(count);
    // Floor the scatter so one-point clusters start with a usable covariance.
    var = var.cwiseMax(1e-4 * gvar);
    st.weights[c] = static_cast<double>(std::max(count, 1));
    st.means[c] = count > 0 ? mean : samples[center_idx[c]];
    st.covs[c] = var.asDiagonal();
  }
  st.weights /= st.weights.sum();
  return st;
}

void regularize(Eigen::MatrixXd& cov, double reg_scale, double fallback_trace) {
  const int d = static_cast<int>(cov.rows());
  double tr = cov.trace();
  if (tr <= 0.0) tr = fallback_trace;
  cov += (reg_scale * tr / d) * Eigen::MatrixXd::Identity(d, d);
}

void check_condition(const Eigen::MatrixXd& cov, double limit) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0 || hi / lo > limit) throw std::runtime_error("degenerate component");
}

// One EM run from the given state. Appends the log-likelihood reached at
// each iteration to `history`.
EmState run_em(const std::vector<Eigen::VectorXd>& samples, EmState st, const EmConfig& config,
               std::vector<double>& history, int* reseed_events) {
  const int n = static_cast<int>(samples.size());
  const int k = static_cast<int>(st.weights.size());
  const int d = static_cast<int>(samples.front().size());
  const Eigen::VectorXd gvar = global_diag_variance(samples);
  const double gtrace = gvar.sum();

  Eigen::MatrixXd resp(n, k);
  Eigen::VectorXd sample_log_density(n);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < config.max_iter; ++iter) {
    const double ll = e_step(samples, st, resp, sample_log_density);
    history.push_back(ll);
    if (ll - prev_ll < config.tol && iter > 0) break;
    prev_ll = ll;

    // M-step.
    const Eigen::VectorXd mass = resp.colwise().sum();
    bool reseeded = false;
    for (int c = 0; c < k; ++c) {
      if (mass[c] < config.reseed_mass_fraction * n) {
        // Re-seed a starved component at the lowest-density sample.
        int worst = 0;
        sample_log_density.minCoeff(&worst);
        st.means[c] = samples[worst];
        st.covs[c] = gvar.asDiagonal();
        st.weights[c] = 1.0 / n;
        st.weights /= st.weights.sum();
        reseeded = true;
        if (reseed_events) ++(*reseed_events);
        continue;
      }
      st.weights[c] = mass[c] / n;
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < n; ++i) mu += resp(i, c) * samples[i];
      mu /= mass[c];
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
      for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd dx = samples[i] - mu;
        cov.noalias() += resp(i, c) * (dx * dx.transpose());
      }
      cov /= mass[c];
      cov = 0.5 * (cov + cov.transpose());
      regularize(cov, config.reg_scale, gtrace);
      check_condition(cov, config.condition_limit);
      st.means[c] = mu;
      st.covs[c] = cov;
    }
    st.weights /= st.weights.sum();
    // A re-seed restarts the ascent; drop the monotonicity anchor.
    if (reseeded) prev_ll = -std::numeric_limits<double>::infinity();
  }
  return st;
}

std::vector<Eigen::VectorXd> pool_samples(const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("no trajectories");
  std::vector<Eigen::VectorXd> samples;
  for (const auto& traj : trajectories) {
    traj.validate();
    if (traj.steps.size() < 2) throw std::invalid_argument("trajectory needs at least 2 steps");
    for (const auto& step : traj.steps) {
      Eigen::VectorXd x(step.s.size() * 2);
      x << step.s, step.s_dot;
      samples.push_back(std::move(x));
    }
  }
  return samples;
}

GmmPolicy state_to_policy(const EmState& st, std::int64_t seed) {
  ModelMeta meta;
  meta.seed = seed;
  return GmmPolicy(st.weights, st.means, st.covs, meta);
}

}  // namespace

EmResult fit_em_detailed(const std::vector<Trajectory>& trajectories, int k, std::uint64_t seed,
                         const EmConfig& config) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  const auto samples = pool_samples(trajectories);
  if (static_cast<int>(samples.size()) < k) throw std::runtime_error("insufficient data");

  EmResult result;
  double best_ll = -std::numeric_limits<double>::infinity();
  std::optional<EmState> best_state;
  std::string last_error = "degenerate component";
  for (int r = 0; r < config.restarts; ++r) {
    Rng rng(split_seed(seed, 0x656D /*em*/, r));
    std::vector<double> history;
    try {
      EmState st = run_em(samples, init_kmeanspp(samples, k, rng), config, history,
                          &result.reseed_events);
      const double ll = history.back();
      result.restart_log_likelihoods.push_back(history);
      if (ll > best_ll) {
        best_ll = ll;
        best_state = std::move(st);
        result.best_restart = static_cast<int>(result.restart_log_likelihoods.size()) - 1;
      }
    } catch (const std::runtime_error& e) {
      last_error = e.what();
      result.restart_log_likelihoods.push_back(history);
    }
  }
  if (!best_state) throw std::runtime_error(last_error);
  result.policy = state_to_policy(*best_state, static_cast<std::int64_t>(seed));
  return result;
}

GmmPolicy fit_em(const std::vector<Trajectory>& trajectories, int k, std::uint64_t seed,
                 const EmConfig& config) {
  return *fit_em_detailed(trajectories, k, seed, config).policy;
}

GmmPolicy fit_em_warm(const GmmPolicy& start, const std::vector<Trajectory>& trajectories,
                      const EmConfig& config) {
  const auto samples = pool_samples(trajectories);
  if (static_cast<int>(samples.size()) < start.components())
    throw std::runtime_error("insufficient data");
  EmState st{start.weights(), start.means(), start.covariances()};
  // Update-touched models may carry joint covariances that are symmetric but
  // not positive definite (only the position block is guaranteed). Repair the
  // starting point with a minimal ridge; it is an initialization, not data.
  for (auto& cov : st.covs) {
    cov = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double floor = 1e-6 * cov.trace() / cov.rows();
    const double lift = floor - es.eigenvalues().minCoeff();
    if (lift > 0.0) cov += lift * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  }
  std::vector<double> history;
  st = run_em(samples, std::move(st), config, history, nullptr);
  return state_to_policy(st, start.meta().seed);
}

std::string model_to_json(const GmmPolicy& policy) {
  json j;
  j["k"] = policy.components();
  j["dim_s"] = policy.dim_s();
  j["weights"] = from_vector(policy.weights());
  json means = json::array();
  for (const auto& m : policy.means()) means.push_back(from_vector(m));
  j["means"] = std::move(means);
  json covs = json::array();
  for (const auto& cov : policy.covariances()) {
    json flat = json::array();
    for (int r = 0; r < cov.rows(); ++r)
      for (int c = 0; c < cov.cols(); ++c) flat.push_back(cov(r, c));
    covs.push_back(std::move(flat));
  }
  j["covariances"] = std::move(covs);
  j["meta"] = {{"seed", policy.meta().seed},
               {"created", policy.meta().created},
               {"source_demos", policy.meta().source_demos}};
  return j.dump();
}

GmmPolicy model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed model file: ") + e.what());
  }
  try {
    const int k = j.at("k").get<int>();
    const int dim_s = j.at("dim_s").get<int>();
    const int joint = 2 * dim_s;
    Eigen::VectorXd weights = to_vector(j.at("weights"));
    std::vector<Eigen::VectorXd> means;
    for (const auto& m : j.at("means")) means.push_back(to_vector(m));
    std::vector<Eigen::MatrixXd> covs;
    for (const auto& flat : j.at("covariances")) {
      if (static_cast<int>(flat.size()) != joint * joint)
        throw std::runtime_error("malformed model file: covariance size");
      Eigen::MatrixXd cov(joint, joint);
      int idx = 0;
      for (int r = 0; r < joint; ++r)
        for (int c = 0; c < joint; ++c) cov(r, c) = flat[idx++].get<double>();
      covs.push_back(std::move(cov));
    }
    ModelMeta meta;
    if (j.contains("meta")) {
      meta.seed = j["meta"].value("seed", std::int64_t{0});
      meta.created = j["meta"].value("created", std::string{});
      meta.source_demos = j["meta"].value("source_demos", std::string{});
    }
    GmmPolicy policy(std::move(weights), std::move(means), std::move(covs), std::move(meta));
    if (policy.components() != k || policy.dim_s() != dim_s)
      throw std::invalid_argument("model header disagrees with parameter shapes");
    return policy;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const GmmPolicy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << model_to_json(policy) << "\n";
}

GmmPolicy load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

std::string trajectory_to_json(const Trajectory& trajectory) {
  json j;
  j["task_id"] = trajectory.task_id;
  j["seed"] = trajectory.seed;
  j["success"] = trajectory.success;
  json steps = json::array();
  for (const auto& step : trajectory.steps) {
    steps.push_back(
        {{"t", step.t}, {"s", from_vector(step.s)}, {"s_dot", from_vector(step.s_dot)}});
  }
  j["steps"] = std::move(steps);
  return j.dump();
}

Trajectory trajectory_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
    Trajectory traj;
    traj.task_id = j.at("task_id").get<std::string>();
    traj.seed = j.at("seed").get<std::int64_t>();
    traj.success = j.at("success").get<bool>();
    for (const auto& s : j.at("steps")) {
      TrajectoryStep step;
      step.t = s.at("t").get<double>();
      step.s = to_vector(s.at("s"));
      step.s_dot = to_vector(s.at("s_dot"));
      traj.steps.push_back(std::move(step));
    }
    traj.validate();
    return traj;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed trajectory line: ") + e.what());
  }
}

void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories,
                       const TrajectoryFileMeta& meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  json header;
  header["meta"] = {{"task_id", meta.task_id}, {"count", meta.count}, {"seed", meta.seed}};
  out << header.dump() << "\n";
  for (const auto& traj : trajectories) out << trajectory_to_json(traj) << "\n";
}

std::vector<Trajectory> load_trajectories(const std::string& path, TrajectoryFileMeta* meta_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(std::string("malformed trajectory line: ") + e.what());
    }
    if (j.contains("meta")) {
      if (meta_out) {
        meta_out->task_id = j["meta"].value("task_id", std::string{});
        meta_out->count = j["meta"].value("count", 0);
        meta_out->seed = j["meta"].value("seed", std::int64_t{0});
      }
      continue;
    }
    out.push_back(trajectory_from_json(line));
  }
  return out;
}

}  // namespace gmmbo
