#include "keyforge/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_map>

#include "keyforge/csv.hpp"
#include "keyforge/error.hpp"
#include "keyforge/parallel.hpp"

namespace keyforge {

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::Euclidean: return "euclidean";
    case Metric::Manhattan: return "manhattan";
    case Metric::ScaledManhattan: return "scaled-manhattan";
    case Metric::Mahalanobis: return "mahalanobis";
  }
  return "scaled-manhattan";
}

Metric parse_metric(std::string_view text) {
  if (text == "euclidean") return Metric::Euclidean;
  if (text == "manhattan") return Metric::Manhattan;
  if (text == "scaled-manhattan" || text == "scaled_manhattan") return Metric::ScaledManhattan;
  if (text == "mahalanobis") return Metric::Mahalanobis;
  throw ConfigError("unknown metric '" + std::string(text) + "'");
}

std::vector<UserTemplate> fit_templates(const LabeledMatrix& train) {
  const auto dim = static_cast<Eigen::Index>(train.cols());
  std::vector<std::vector<Eigen::Index>> rows_of(train.n_classes());
  for (std::size_t i = 0; i < train.rows(); ++i) rows_of[train.y[i]].push_back(static_cast<Eigen::Index>(i));

  std::vector<UserTemplate> templates;
  templates.reserve(train.n_classes());
  for (std::size_t s = 0; s < train.n_classes(); ++s) {
    const auto& rows = rows_of[s];
    if (rows.size() < 2) {
      throw InsufficientDataError("subject '" + train.roster[s] + "' has " + std::to_string(rows.size()) +
                                  " training records, need at least 2");
    }
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) samples.row(static_cast<Eigen::Index>(r)) = train.x.row(rows[r]);

    UserTemplate t;
    t.subject = train.roster[s];
    t.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centered = samples.rowwise() - t.mean.transpose();
    t.mad = centered.cwiseAbs().colwise().mean().transpose().cwiseMax(UserTemplate::kMadFloor);

    t.covariance = (centered.transpose() * centered) / static_cast<double>(rows.size() - 1);
    // A degenerate subject (all records identical) has zero trace; keep a
    // tiny positive ridge so the factorization still exists.
    t.ridge = std::max(1e-6 * t.covariance.trace() / static_cast<double>(dim), 1e-12);
    t.covariance.diagonal().array() += t.ridge;
    t.cholesky.compute(t.covariance);
    if (t.cholesky.info() != Eigen::Success) {
      throw NumericError("covariance of subject '" + t.subject + "' is not positive definite");
    }
    templates.push_back(std::move(t));
  }
  return templates;
}

double score(const UserTemplate& tmpl, const Eigen::Ref<const Eigen::VectorXd>& x, Metric metric) {
  if (x.size() != tmpl.mean.size()) {
    throw ShapeError("feature vector has " + std::to_string(x.size()) + " values, template expects " +
                     std::to_string(tmpl.mean.size()));
  }
  const Eigen::VectorXd diff = x - tmpl.mean;
  switch (metric) {
    case Metric::Euclidean: return diff.norm();
    case Metric::Manhattan: return diff.cwiseAbs().sum();
    case Metric::ScaledManhattan: return diff.cwiseAbs().cwiseQuotient(tmpl.mad).sum();
    case Metric::Mahalanobis: {
      // (x-mu)' S^-1 (x-mu) = |L^-1 (x-mu)|^2
      const Eigen::VectorXd z = tmpl.cholesky.matrixL().solve(diff);
      return z.norm();
    }
  }
  return 0.0;
}

ScoreSet score_all(std::span<const UserTemplate> templates, const LabeledMatrix& test, Metric metric,
                   unsigned threads) {
  std::unordered_map<std::string, std::size_t> template_of;
  for (std::size_t t = 0; t < templates.size(); ++t) template_of.emplace(templates[t].subject, t);
  std::vector<std::size_t> owner(test.rows());
  for (std::size_t i = 0; i < test.rows(); ++i) {
    const auto& name = test.roster[test.y[i]];
    const auto it = template_of.find(name);
    if (it == template_of.end()) throw EvaluationError("no template for test subject '" + name + "'");
    owner[i] = it->second;
  }

  ScoreSet set;
  set.metric = metric;
  set.subjects.resize(templates.size());
  parallel_for(templates.size(), threads, [&](std::size_t t) {
    auto& entry = set.subjects[t];
    entry.subject = templates[t].subject;
    for (std::size_t i = 0; i < test.rows(); ++i) {
      const double s = score(templates[t], test.x.row(static_cast<Eigen::Index>(i)).transpose(), metric);
      (owner[i] == t ? entry.genuine : entry.impostor).push_back(s);
    }
  });
  return set;
}

void write_score_dump(std::ostream& out, std::span<const UserTemplate> templates,
                      const LabeledMatrix& test, Metric metric) {
  out << "claimed_subject,true_subject,metric,score\n";
  for (const auto& tmpl : templates) {
    for (std::size_t i = 0; i < test.rows(); ++i) {
      out << csv::quote(tmpl.subject) << ',' << csv::quote(test.roster[test.y[i]]) << ','
          << to_string(metric) << ','
          << csv::format_double(score(tmpl, test.x.row(static_cast<Eigen::Index>(i)).transpose(), metric))
          << '\n';
    }
  }
}

}  // namespace keyforge
