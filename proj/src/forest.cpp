#include "keyforge/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "keyforge/error.hpp"
#include "keyforge/parallel.hpp"
#include "keyforge/random.hpp"

namespace keyforge {

int ClassificationTree::leaf_for(const double* x, std::ptrdiff_t stride) const {
  int node = 0;
  while (nodes[node].feature >= 0) {
    const auto& n = nodes[node];
    node = x[n.feature * stride] <= n.threshold ? n.left : n.right;
  }
  return node;
}

std::size_t ClassificationTree::depth() const {
  std::vector<std::size_t> level(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (nodes[i].feature >= 0) {
      level[nodes[i].left] = level[i] + 1;
      level[nodes[i].right] = level[i] + 1;
    }
  }
  return deepest;
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = -1.0;  // sum over children of (sum of squared counts) / size
};

struct Pending {
  int node;
  std::size_t begin;
  std::size_t end;
  int depth;
  std::uint64_t key;
};

}  // namespace

ClassificationTree grow_tree(const Eigen::MatrixXd& x, std::span<const int> y, std::size_t n_classes,
                             std::vector<int> samples, const ForestConfig& cfg, int max_features,
                             std::uint64_t tree_seed) {
  const auto n_features = static_cast<int>(x.cols());
  ClassificationTree tree;
  tree.nodes.emplace_back();

  std::vector<Pending> stack{{0, 0, samples.size(), 0, 1}};
  std::vector<double> counts(n_classes);
  std::vector<double> left(n_classes);
  std::vector<double> right(n_classes);
  std::vector<std::pair<double, int>> column;  // (value, label)
  std::vector<int> features(static_cast<std::size_t>(n_features));

  const auto make_leaf = [&](int node) {
    auto& n = tree.nodes[node];
    n.feature = -1;
    n.leaf_begin = static_cast<int>(tree.entries.size());
    double total = 0.0;
    for (double c : counts) total += c;
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (counts[c] > 0) tree.entries.push_back({static_cast<int>(c), counts[c] / total});
    }
    n.leaf_end = static_cast<int>(tree.entries.size());
  };

  while (!stack.empty()) {
    const Pending job = stack.back();
    stack.pop_back();
    const std::size_t size = job.end - job.begin;

    std::fill(counts.begin(), counts.end(), 0.0);
    for (std::size_t i = job.begin; i < job.end; ++i) counts[y[samples[i]]] += 1.0;
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
    const bool depth_reached = cfg.max_depth && job.depth >= *cfg.max_depth;
    if (pure || depth_reached || size < static_cast<std::size_t>(cfg.min_samples_split) ||
        size < 2 * static_cast<std::size_t>(cfg.min_samples_leaf)) {
      make_leaf(job.node);
      continue;
    }

    // Per-node generator keyed by the node's path from the root, so a tree
    // grown with a smaller max_depth is a prefix of the deeper one.
    Rng rng(derive_seed(tree_seed, job.key));
    std::iota(features.begin(), features.end(), 0);
    rng.shuffle(std::span<int>(features));

    Split best;
    int visited = 0;
    for (int f : features) {
      if (visited >= max_features && best.feature >= 0) break;
      ++visited;
      column.clear();
      for (std::size_t i = job.begin; i < job.end; ++i) column.emplace_back(x(samples[i], f), y[samples[i]]);
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;

      std::fill(left.begin(), left.end(), 0.0);
      right = counts;
      double sq_left = 0.0;
      double sq_right = 0.0;
      for (double c : counts) sq_right += c * c;
      for (std::size_t i = 0; i + 1 < size; ++i) {
        const int label = column[i].second;
        sq_left += 2.0 * left[label] + 1.0;
        left[label] += 1.0;
        sq_right -= 2.0 * right[label] - 1.0;
        right[label] -= 1.0;
        const double n_left = static_cast<double>(i + 1);
        const double n_right = static_cast<double>(size - i - 1);
        if (column[i].first == column[i + 1].first) continue;
        if (n_left < cfg.min_samples_leaf || n_right < cfg.min_samples_leaf) continue;
        // Minimizing n_l*gini_l + n_r*gini_r == maximizing this score.
        const double split_score = sq_left / n_left + sq_right / n_right;
        if (split_score > best.score) {
          double threshold = 0.5 * (column[i].first + column[i + 1].first);
          if (threshold >= column[i + 1].first) threshold = column[i].first;
          best = {f, threshold, split_score};
        }
      }
    }
    if (best.feature < 0) {
      make_leaf(job.node);
      continue;
    }

    const auto middle = std::partition(samples.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                       samples.begin() + static_cast<std::ptrdiff_t>(job.end),
                                       [&](int s) { return x(s, best.feature) <= best.threshold; });
    const auto split_at = static_cast<std::size_t>(middle - samples.begin());
    const int left_node = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& parent = tree.nodes[job.node];
    parent.feature = best.feature;
    parent.threshold = best.threshold;
    parent.left = left_node;
    parent.right = left_node + 1;
    stack.push_back({left_node + 1, split_at, job.end, job.depth + 1, mix_seed(2 * job.key + 1)});
    stack.push_back({left_node, job.begin, split_at, job.depth + 1, mix_seed(2 * job.key)});
  }
  return tree;
}

ForestModel forest_fit(const LabeledMatrix& train, const ForestConfig& cfg, unsigned threads) {
  if (train.rows() == 0) throw TrainingError("random forest needs a non-empty training set");
  if (cfg.n_estimators < 1) throw ConfigError("n_estimators must be >= 1");
  if (cfg.min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
  if (cfg.min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
  if (cfg.max_depth && *cfg.max_depth < 1) throw ConfigError("max_depth must be >= 1");

  const auto n = train.rows();
  const auto n_features = static_cast<int>(train.cols());
  int max_features = cfg.max_features > 0
                         ? std::min(cfg.max_features, n_features)
                         : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_features))));
  max_features = std::max(max_features, 1);

  ForestModel model;
  model.config = cfg;
  model.n_classes = train.n_classes();
  model.n_features = train.cols();
  model.trees.resize(static_cast<std::size_t>(cfg.n_estimators));
  parallel_for(model.trees.size(), threads, [&](std::size_t t) {
    const std::uint64_t tree_seed = derive_seed(cfg.seed, t);
    std::vector<int> samples(n);
    if (cfg.bootstrap) {
      Rng rng(derive_seed(tree_seed, 0));
      for (auto& s : samples) s = static_cast<int>(rng.below(n));
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    model.trees[t] = grow_tree(train.x, train.y, model.n_classes, std::move(samples), cfg, max_features,
                               tree_seed);
  });
  return model;
}

Eigen::MatrixXd forest_predict(const ForestModel& model, const Eigen::MatrixXd& x, unsigned threads) {
  if (static_cast<std::size_t>(x.cols()) != model.n_features) {
    throw ShapeError("query has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(model.n_features));
  }
  Eigen::MatrixXd proba = Eigen::MatrixXd::Zero(x.rows(), static_cast<Eigen::Index>(model.n_classes));
  const double share = 1.0 / static_cast<double>(model.trees.size());
  parallel_for(static_cast<std::size_t>(x.rows()), threads, [&](std::size_t r) {
    const auto row = static_cast<Eigen::Index>(r);
    const double* data = x.data() + row;
    for (const auto& tree : model.trees) {
      const auto& leaf = tree.nodes[tree.leaf_for(data, x.rows())];
      for (int e = leaf.leaf_begin; e < leaf.leaf_end; ++e) {
        proba(row, tree.entries[e].label) += share * tree.entries[e].probability;
      }
    }
  });
  return proba;
}

}  // namespace keyforge
