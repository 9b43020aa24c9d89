#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "keyforge/dataset.hpp"

namespace keyforge {

struct GbtConfig {
  double learning_rate = 0.21;
  int n_estimators = 1000;  // boosting rounds
  int max_depth = 2;
  double min_child_weight = 1.4;
  double lambda = 1.0;  // L2 penalty on leaf weights
  std::uint64_t seed = kDefaultSeed;
};

/// Regression tree over logits. Leaf weights are stored unshrunk.
struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double weight = 0.0;
  };
  std::vector<Node> nodes;

  double predict(const double* x, std::ptrdiff_t stride) const;
};

struct GbtModel {
  GbtConfig config;
  std::size_t n_classes = 0;
  std::size_t n_features = 0;
  /// Round-major: trees[round * n_classes + class].
  std::vector<RegressionTree> trees;
  /// Mean training cross-entropy after each round.
  std::vector<double> train_loss;

  std::size_t rounds() const { return n_classes ? trees.size() / n_classes : 0; }
};

/// Fits one second-order regression tree by exact greedy search.
/// `sorted_columns[f]` lists row indices ordered by feature f.
RegressionTree fit_regression_tree(const Eigen::MatrixXd& x,
                                   const std::vector<std::vector<int>>& sorted_columns,
                                   std::span<const double> grad, std::span<const double> hess,
                                   const GbtConfig& cfg);

/// Optional per-round observer (round index, training loss).
using RoundCallback = std::function<void(int, double)>;

GbtModel gbt_fit(const LabeledMatrix& train, const GbtConfig& cfg, unsigned threads = 0,
                 const RoundCallback& on_round = {});

Eigen::MatrixXd gbt_logits(const GbtModel& model, const Eigen::MatrixXd& x);
Eigen::MatrixXd gbt_predict(const GbtModel& model, const Eigen::MatrixXd& x);

/// Row-wise softmax, numerically stabilized.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

}  // namespace keyforge
