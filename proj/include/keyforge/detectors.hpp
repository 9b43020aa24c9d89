#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "keyforge/dataset.hpp"

namespace keyforge {

enum class Metric { Euclidean, Manhattan, ScaledManhattan, Mahalanobis };

std::string_view to_string(Metric metric);
/// Accepts euclidean, manhattan, scaled-manhattan (or scaled_manhattan),
/// mahalanobis.
Metric parse_metric(std::string_view text);

/// Per-subject enrollment template. Lower scores mean "more genuine".
struct UserTemplate {
  static constexpr double kMadFloor = 1e-6;

  std::string subject;
  Eigen::VectorXd mean;
  Eigen::VectorXd mad;  // mean absolute deviation, floored at kMadFloor
  Eigen::MatrixXd covariance;  // sample covariance plus ridge on the diagonal
  double ridge = 0.0;
  Eigen::LLT<Eigen::MatrixXd> cholesky;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// One template per roster subject, in roster order.
std::vector<UserTemplate> fit_templates(const LabeledMatrix& train);

/// Throws ShapeError when x does not match the template dimension.
double score(const UserTemplate& tmpl, const Eigen::Ref<const Eigen::VectorXd>& x, Metric metric);

/// Genuine and impostor scores for every claimed identity.
struct SubjectScores {
  std::string subject;
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct ScoreSet {
  Metric metric = Metric::ScaledManhattan;
  std::vector<SubjectScores> subjects;
};

/// Scores every test record against every template. Test labels are matched
/// to templates by subject name.
ScoreSet score_all(std::span<const UserTemplate> templates, const LabeledMatrix& test, Metric metric,
                   unsigned threads = 0);

/// CSV claimed_subject,true_subject,metric,score, one row per (record, template).
void write_score_dump(std::ostream& out, std::span<const UserTemplate> templates,
                      const LabeledMatrix& test, Metric metric);

}  // namespace keyforge
