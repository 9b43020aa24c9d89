#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "keyforge/dataset.hpp"

namespace keyforge {

struct ForestConfig {
  int n_estimators = 1000;
  std::optional<int> max_depth = 35;  // nullopt = grow until pure
  int min_samples_leaf = 1;
  int min_samples_split = 2;
  bool bootstrap = true;
  int max_features = 0;  // 0 = ceil(sqrt(n_features))
  std::uint64_t seed = kDefaultSeed;
};

/// CART classification tree. Leaves store a sparse class distribution.
struct ClassificationTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    int leaf_begin = 0;  // range into entries for leaves
    int leaf_end = 0;
  };
  struct Entry {
    int label = 0;
    double probability = 0.0;
  };

  std::vector<Node> nodes;
  std::vector<Entry> entries;

  /// Index of the leaf reached by row x.
  int leaf_for(const double* x, std::ptrdiff_t stride) const;
  std::size_t depth() const;
};

struct ForestModel {
  ForestConfig config;
  std::size_t n_classes = 0;
  std::size_t n_features = 0;
  std::vector<ClassificationTree> trees;
};

/// Grows one tree on the given (possibly repeated) sample indices.
/// `max_features` must already be resolved (>= 1).
ClassificationTree grow_tree(const Eigen::MatrixXd& x, std::span<const int> y, std::size_t n_classes,
                             std::vector<int> samples, const ForestConfig& cfg, int max_features,
                             std::uint64_t tree_seed);

ForestModel forest_fit(const LabeledMatrix& train, const ForestConfig& cfg, unsigned threads = 0);

/// Mean of the per-tree leaf class distributions.
Eigen::MatrixXd forest_predict(const ForestModel& model, const Eigen::MatrixXd& x, unsigned threads = 0);

}  // namespace keyforge
