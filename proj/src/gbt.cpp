#include "keyforge/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "keyforge/error.hpp"
#include "keyforge/parallel.hpp"

namespace keyforge {

double RegressionTree::predict(const double* x, std::ptrdiff_t stride) const {
  int node = 0;
  while (nodes[node].feature >= 0) {
    const auto& n = nodes[node];
    node = x[n.feature * stride] <= n.threshold ? n.left : n.right;
  }
  return nodes[node].weight;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - peak).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

namespace {

struct NodeStats {
  double grad = 0.0;
  double hess = 0.0;
};

struct BestSplit {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

struct ScanState {
  double grad_left = 0.0;
  double hess_left = 0.0;
  double last_value = 0.0;
  bool seen = false;
};

double leaf_weight(const NodeStats& s, double lambda) { return -s.grad / (s.hess + lambda); }

double structure_score(double g, double h, double lambda) { return g * g / (h + lambda); }

}  // namespace

RegressionTree fit_regression_tree(const Eigen::MatrixXd& x,
                                   const std::vector<std::vector<int>>& sorted_columns,
                                   std::span<const double> grad, std::span<const double> hess,
                                   const GbtConfig& cfg) {
  const std::size_t n = grad.size();
  const double lambda = cfg.lambda;
  RegressionTree tree;
  tree.nodes.emplace_back();
  std::vector<NodeStats> stats(1);
  for (std::size_t i = 0; i < n; ++i) {
    stats[0].grad += grad[i];
    stats[0].hess += hess[i];
  }
  std::vector<int> position(n, 0);
  std::vector<int> frontier{0};

  for (int depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
    // slot[node] = index into frontier, -1 when the node is not expandable
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t s = 0; s < frontier.size(); ++s) slot[frontier[s]] = static_cast<int>(s);
    std::vector<BestSplit> best(frontier.size());
    std::vector<ScanState> scan(frontier.size());

    for (std::size_t f = 0; f < sorted_columns.size(); ++f) {
      std::fill(scan.begin(), scan.end(), ScanState{});
      const double* column = x.col(static_cast<Eigen::Index>(f)).data();
      for (int row : sorted_columns[f]) {
        const int s = slot[position[row]];
        if (s < 0) continue;
        ScanState& st = scan[s];
        const double value = column[row];
        if (st.seen && value != st.last_value) {
          const NodeStats& total = stats[frontier[s]];
          const double hess_right = total.hess - st.hess_left;
          if (st.hess_left >= cfg.min_child_weight && hess_right >= cfg.min_child_weight) {
            const double grad_right = total.grad - st.grad_left;
            const double gain = 0.5 * (structure_score(st.grad_left, st.hess_left, lambda) +
                                       structure_score(grad_right, hess_right, lambda) -
                                       structure_score(total.grad, total.hess, lambda));
            if (gain > best[s].gain) {
              double threshold = 0.5 * (st.last_value + value);
              if (threshold >= value) threshold = st.last_value;
              best[s] = {gain, static_cast<int>(f), threshold};
            }
          }
        }
        st.grad_left += grad[row];
        st.hess_left += hess[row];
        st.last_value = value;
        st.seen = true;
      }
    }

    std::vector<int> next;
    for (std::size_t s = 0; s < frontier.size(); ++s) {
      if (best[s].feature < 0) continue;
      const int node = frontier[s];
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stats.emplace_back();
      stats.emplace_back();
      tree.nodes[node].feature = best[s].feature;
      tree.nodes[node].threshold = best[s].threshold;
      tree.nodes[node].left = left;
      tree.nodes[node].right = left + 1;
      next.push_back(left);
      next.push_back(left + 1);
    }
    if (next.empty()) break;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& node = tree.nodes[position[i]];
      if (node.feature < 0) continue;
      const int child = x(static_cast<Eigen::Index>(i), node.feature) <= node.threshold ? node.left : node.right;
      position[i] = child;
      stats[child].grad += grad[i];
      stats[child].hess += hess[i];
    }
    frontier = std::move(next);
  }

  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (tree.nodes[i].feature < 0) tree.nodes[i].weight = leaf_weight(stats[i], lambda);
  }
  return tree;
}

namespace {

double cross_entropy(const Eigen::MatrixXd& proba, std::span<const int> y) {
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    loss -= std::log(std::max(proba(static_cast<Eigen::Index>(i), y[i]), 1e-300));
  }
  return loss / static_cast<double>(y.size());
}

}  // namespace

GbtModel gbt_fit(const LabeledMatrix& train, const GbtConfig& cfg, unsigned threads,
                 const RoundCallback& on_round) {
  const std::size_t k = train.n_classes();
  if (k < 2) throw ConfigError("gradient boosting needs at least 2 classes");
  if (!(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0)) throw ConfigError("learning_rate must lie in (0, 1]");
  if (cfg.max_depth < 1) throw ConfigError("max_depth must be >= 1");
  if (cfg.n_estimators < 1) throw ConfigError("n_estimators must be >= 1");
  if (cfg.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (train.rows() == 0) throw TrainingError("gradient boosting needs a non-empty training set");

  const std::size_t n = train.rows();
  std::vector<std::vector<int>> sorted_columns(train.cols());
  for (std::size_t f = 0; f < train.cols(); ++f) {
    auto& order = sorted_columns[f];
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    const auto col = static_cast<Eigen::Index>(f);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return train.x(a, col) < train.x(b, col); });
  }

  GbtModel model;
  model.config = cfg;
  model.n_classes = k;
  model.n_features = train.cols();
  model.trees.reserve(k * static_cast<std::size_t>(cfg.n_estimators));

  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  std::vector<std::vector<double>> grad(k, std::vector<double>(n));
  std::vector<std::vector<double>> hess(k, std::vector<double>(n));
  std::vector<RegressionTree> round_trees(k);

  for (int round = 0; round < cfg.n_estimators; ++round) {
    const Eigen::MatrixXd proba = softmax_rows(logits);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = proba(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        const double g = p - (train.y[i] == static_cast<int>(c) ? 1.0 : 0.0);
        const double h = std::max(p * (1.0 - p), 1e-16);
        if (!std::isfinite(g) || !std::isfinite(h)) {
          throw NumericError("non-finite gradient in boosting round " + std::to_string(round));
        }
        grad[c][i] = g;
        hess[c][i] = h;
      }
    }
    parallel_for(k, threads, [&](std::size_t c) {
      round_trees[c] = fit_regression_tree(train.x, sorted_columns, grad[c], hess[c], cfg);
    });
    for (std::size_t c = 0; c < k; ++c) {
      const auto col = static_cast<Eigen::Index>(c);
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        logits(row, col) += cfg.learning_rate * round_trees[c].predict(train.x.data() + row, train.x.rows());
      }
      model.trees.push_back(std::move(round_trees[c]));
    }
    const double loss = cross_entropy(softmax_rows(logits), train.y);
    if (!std::isfinite(loss)) throw NumericError("non-finite training loss in boosting round " + std::to_string(round));
    model.train_loss.push_back(loss);
    if (on_round) on_round(round, loss);
  }
  return model;
}

Eigen::MatrixXd gbt_logits(const GbtModel& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.n_features) {
    throw ShapeError("query has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(model.n_features));
  }
  const auto k = model.n_classes;
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(x.rows(), static_cast<Eigen::Index>(k));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double* row = x.data() + r;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
      logits(r, static_cast<Eigen::Index>(t % k)) += model.config.learning_rate * model.trees[t].predict(row, x.rows());
    }
  }
  return logits;
}

Eigen::MatrixXd gbt_predict(const GbtModel& model, const Eigen::MatrixXd& x) {
  return softmax_rows(gbt_logits(model, x));
}

}  // namespace keyforge
