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

#include "gmmbo/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gmmbo/rng.hpp"

namespace gmmbo {
namespace {

struct SplitCandidate {
  bool valid = false;
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // weighted variance after the split; lower is better
};

// Best variance-reduction split of `indices` along one feature. Returns an
// invalid candidate when every value of the feature is identical.
SplitCandidate best_split_on_feature(const std::vector<Eigen::VectorXd>& inputs,
                                     const std::vector<double>& targets,
                                     const std::vector<int>& indices, int feature,
                                     int min_samples_leaf) {
  const int n = static_cast<int>(indices.size());
  std::vector<std::pair<double, int>> order(n);
  for (int i = 0; i < n; ++i) order[i] = {inputs[indices[i]][feature], indices[i]};
  std::sort(order.begin(), order.end());

  std::vector<double> prefix_y(n + 1, 0.0), prefix_y2(n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    const double y = targets[order[i].second];
    prefix_y[i + 1] = prefix_y[i] + y;
    prefix_y2[i + 1] = prefix_y2[i] + y * y;
  }

  SplitCandidate best;
  for (int i = min_samples_leaf; i + min_samples_leaf <= n; ++i) {
    if (order[i - 1].first == order[i].first) continue;  // no threshold separates
    const double n_l = i, n_r = n - i;
    const double sse_l = prefix_y2[i] - prefix_y[i] * prefix_y[i] / n_l;
    const double sum_r = prefix_y[n] - prefix_y[i];
    const double sse_r = (prefix_y2[n] - prefix_y2[i]) - sum_r * sum_r / n_r;
    const double score = sse_l + sse_r;
    if (!best.valid || score < best.score) {
      best.valid = true;
      best.feature = feature;
      best.threshold = 0.5 * (order[i - 1].first + order[i].first);
      best.score = score;
    }
  }
  return best;
}

}  // namespace

void ForestConfig::validate() const {
  if (n_trees < 2) throw std::invalid_argument("forest needs at least 2 trees");
  if (min_samples_leaf < 1) throw std::invalid_argument("min_samples_leaf must be >= 1");
  if (feature_subsample <= 0.0 || feature_subsample > 1.0)
    throw std::invalid_argument("feature_subsample must be in (0, 1]");
}

RandomForest::RandomForest(const std::vector<Eigen::VectorXd>& inputs,
                           const std::vector<double>& targets, ForestConfig config) {
  config.validate();
  if (inputs.empty()) throw std::invalid_argument("empty dataset");
  if (inputs.size() != targets.size())
    throw std::invalid_argument("inputs and targets disagree in size");
  input_dimension_ = static_cast<int>(inputs.front().size());
  const int n = static_cast<int>(inputs.size());
  const int d = input_dimension_;
  const int subset_size =
      std::max(1, static_cast<int>(std::lround(config.feature_subsample * d)));

  trees_.resize(config.n_trees);
  for (int t = 0; t < config.n_trees; ++t) {
    Rng rng(split_seed(config.seed, 0x74726565 /*tree*/, t));

    std::vector<int> indices(n);
    if (config.bootstrap) {
      for (int i = 0; i < n; ++i) indices[i] = static_cast<int>(rng.uniform_index(n));
    } else {
      std::iota(indices.begin(), indices.end(), 0);
    }

    Tree& tree = trees_[t];
    // Iterative construction with an explicit stack of (node id, members).
    struct Work {
      int node;
      std::vector<int> members;
    };
    tree.nodes.push_back({});
    std::vector<Work> stack;
    stack.push_back({0, std::move(indices)});
    std::vector<int> feature_order(d);
    std::iota(feature_order.begin(), feature_order.end(), 0);

    while (!stack.empty()) {
      Work work = std::move(stack.back());
      stack.pop_back();
      const auto& members = work.members;
      const int m = static_cast<int>(members.size());

      double sum = 0.0;
      for (int idx : members) sum += targets[idx];
      const double mean = sum / m;
      double sse = 0.0;
      for (int idx : members) sse += (targets[idx] - mean) * (targets[idx] - mean);

      Node& node = tree.nodes[work.node];
      node.value = mean;
      if (m < 2 * config.min_samples_leaf || sse <= 0.0) continue;

      // Candidate features: a random subset first, the remainder as a
      // fallback so separable points always get separated.
      for (int i = 0; i < subset_size; ++i) {
        const int j = i + static_cast<int>(rng.uniform_index(d - i));
        std::swap(feature_order[i], feature_order[j]);
      }
      SplitCandidate best;
      for (int i = 0; i < d; ++i) {
        if (i == subset_size && best.valid) break;
        const SplitCandidate cand = best_split_on_feature(inputs, targets, members,
                                                          feature_order[i],
                                                          config.min_samples_leaf);
        if (cand.valid && (!best.valid || cand.score < best.score)) best = cand;
      }
      if (!best.valid) continue;  // all inputs identical along every feature

      std::vector<int> left, right;
      for (int idx : members) {
        (inputs[idx][best.feature] <= best.threshold ? left : right).push_back(idx);
      }
      const int left_id = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      const int right_id = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      Node& parent = tree.nodes[work.node];
      parent.feature = best.feature;
      parent.threshold = best.threshold;
      parent.left = left_id;
      parent.right = right_id;
      stack.push_back({left_id, std::move(left)});
      stack.push_back({right_id, std::move(right)});
    }
  }
}

double RandomForest::predict_tree(const Tree& tree, const Eigen::VectorXd& x) const {
  int node = 0;
  while (tree.nodes[node].feature >= 0) {
    const Node& n = tree.nodes[node];
    node = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return tree.nodes[node].value;
}

Eigen::VectorXd RandomForest::tree_predictions(const Eigen::VectorXd& x) const {
  if (x.size() != input_dimension_) throw std::invalid_argument("query dimension mismatch");
  Eigen::VectorXd out(tree_count());
  for (int t = 0; t < tree_count(); ++t) out[t] = predict_tree(trees_[t], x);
  return out;
}

std::pair<double, double> RandomForest::predict(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd preds = tree_predictions(x);
  if (preds.maxCoeff() == preds.minCoeff()) return {preds[0], 0.0};  // agreement is exact
  const double mean = preds.mean();
  const double var = (preds.array() - mean).square().mean();
  return {mean, std::sqrt(std::max(var, 0.0))};
}

}  // namespace gmmbo
