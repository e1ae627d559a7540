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
#include <cstdint>
#include <utility>
#include <vector>

namespace gmmbo {

struct ForestConfig {
  int n_trees = 40;
  int min_samples_leaf = 1;
  double feature_subsample = 0.8;
  bool bootstrap = true;
  std::uint64_t seed = 0;

  void validate() const;  // n_trees >= 2: the spread estimate needs disagreement
};

// Random-forest regressor: variance-reduction splits on a random feature
// subset per node, mean aggregation across trees, spread across trees as the
// uncertainty estimate. With bootstrap=false and min_samples_leaf=1 each
// tree interpolates the training data exactly (distinct inputs end up in
// singleton leaves).
class RandomForest {
 public:
  RandomForest(const std::vector<Eigen::VectorXd>& inputs, const std::vector<double>& targets,
               ForestConfig config);

  int input_dimension() const { return input_dimension_; }
  int tree_count() const { return static_cast<int>(trees_.size()); }

  // One prediction per tree.
  Eigen::VectorXd tree_predictions(const Eigen::VectorXd& x) const;

  // Mean and population standard deviation across trees.
  std::pair<double, double> predict(const Eigen::VectorXd& x) const;

 private:
  struct Node {
    int feature = -1;  // -1: leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  struct Tree {
    std::vector<Node> nodes;
  };

  double predict_tree(const Tree& tree, const Eigen::VectorXd& x) const;

  int input_dimension_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace gmmbo
