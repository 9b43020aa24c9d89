#include "keyforge/knn.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "keyforge/error.hpp"
#include "keyforge/parallel.hpp"

namespace keyforge {

std::string_view to_string(KnnWeight weight) {
  return weight == KnnWeight::Uniform ? "uniform" : "distance";
}

KnnWeight parse_knn_weight(std::string_view text) {
  if (text == "uniform") return KnnWeight::Uniform;
  if (text == "distance") return KnnWeight::Distance;
  throw ConfigError("unknown k-NN weight '" + std::string(text) + "'");
}

namespace {

// Distance raised to the p-th power; monotone in the true distance, so it
// is enough for ranking.
double powered_distance(const double* a, const double* b, Eigen::Index n, int p) {
  double sum = 0.0;
  switch (p) {
    case 1:
      for (Eigen::Index i = 0; i < n; ++i) sum += std::abs(a[i] - b[i]);
      break;
    case 2:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
      }
      break;
    default:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = std::abs(a[i] - b[i]);
        sum += d * d * d;
      }
      break;
  }
  return sum;
}

double root(double powered, int p) {
  switch (p) {
    case 1: return powered;
    case 2: return std::sqrt(powered);
    default: return std::cbrt(powered);
  }
}

}  // namespace

double minkowski(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                 const Eigen::Ref<const Eigen::RowVectorXd>& b, int p) {
  const Eigen::RowVectorXd da = a;
  const Eigen::RowVectorXd db = b;
  return root(powered_distance(da.data(), db.data(), da.size(), p), p);
}

KnnModel knn_fit(const LabeledMatrix& train, const KnnConfig& cfg) {
  if (train.rows() == 0) throw TrainingError("k-NN needs a non-empty training set");
  if (cfg.n_neighbors < 1) throw ConfigError("n_neighbors must be >= 1");
  if (static_cast<std::size_t>(cfg.n_neighbors) > train.rows()) {
    throw ConfigError("n_neighbors (" + std::to_string(cfg.n_neighbors) + ") exceeds training size (" +
                      std::to_string(train.rows()) + ")");
  }
  if (cfg.p < 1 || cfg.p > 3) throw ConfigError("Minkowski p must be 1, 2 or 3");
  KnnModel model;
  model.config = cfg;
  model.x = train.x;
  model.y = train.y;
  model.n_classes = train.n_classes();
  return model;
}

Eigen::MatrixXd knn_predict(const KnnModel& model, const Eigen::MatrixXd& x, unsigned threads) {
  if (x.cols() != model.x.cols()) {
    throw ShapeError("query has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(model.x.cols()));
  }
  // Row-major copies so each distance walks contiguous memory.
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor reference = model.x;
  const RowMajor queries = x;
  const auto n_train = static_cast<std::size_t>(reference.rows());
  const auto dim = reference.cols();
  const auto k = static_cast<std::size_t>(model.config.n_neighbors);
  const int p = model.config.p;

  Eigen::MatrixXd proba = Eigen::MatrixXd::Zero(x.rows(), static_cast<Eigen::Index>(model.n_classes));
  parallel_for(static_cast<std::size_t>(x.rows()), threads, [&](std::size_t q) {
    std::vector<std::pair<double, std::size_t>> dist(n_train);
    const double* query = queries.row(static_cast<Eigen::Index>(q)).data();
    for (std::size_t i = 0; i < n_train; ++i) {
      dist[i] = {powered_distance(query, reference.row(static_cast<Eigen::Index>(i)).data(), dim, p), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    std::vector<double> votes(model.n_classes, 0.0);
    const bool exact_match = dist[0].first == 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const int label = model.y[dist[j].second];
      if (model.config.weight == KnnWeight::Uniform) {
        votes[label] += 1.0;
      } else if (exact_match) {
        if (dist[j].first == 0.0) votes[label] += 1.0;
      } else {
        votes[label] += 1.0 / root(dist[j].first, p);
      }
    }
    double total = 0.0;
    for (double v : votes) total += v;
    for (std::size_t c = 0; c < model.n_classes; ++c) {
      proba(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(c)) = votes[c] / total;
    }
  });
  return proba;
}

}  // namespace keyforge
