#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "keyforge/classifier.hpp"
#include "keyforge/dataset.hpp"
#include "keyforge/detectors.hpp"

namespace keyforge {

struct EvalReport {
  std::string model;
  std::string features;
  double accuracy = 0.0;
  std::optional<double> eer_mean;
  std::vector<std::string> roster;
  /// confusion[true][predicted]
  std::vector<std::vector<long long>> confusion;
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t test_size = 0;
  double train_seconds = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
};

/// Confusion, accuracy and per-class precision/recall from label vectors.
EvalReport evaluate_predictions(const std::vector<std::string>& roster, std::span<const int> truth,
                                std::span<const int> predicted);

/// Evaluates a fitted model on a held-out dataset. Test subjects are matched
/// to the model roster by name; an unknown subject is an EvaluationError.
/// Also fills eer_mean from the model's class probabilities.
EvalReport accuracy_report(const ClassifierModel& model, const Dataset& test, unsigned threads = 0);

struct RocPoint {
  double threshold;  // accept when score <= threshold
  double far;
  double frr;
};

struct RocCurve {
  std::string subject;
  std::vector<RocPoint> points;  // ascending threshold, first point at -inf
  double eer = 0.0;
  double eer_threshold = 0.0;
};

/// Sweeps thresholds over the sorted union of scores (lower = genuine) and
/// interpolates linearly between the two thresholds bracketing FAR == FRR.
RocCurve roc_curve(std::string subject, std::span<const double> genuine, std::span<const double> impostor);

struct EerSummary {
  std::vector<RocCurve> curves;
  double mean_eer = 0.0;  // unweighted over subjects
};

EerSummary roc_and_eer(const ScoreSet& scores);

/// Verification scores derived from a classifier: score = 1 - P(claimed).
ScoreSet classifier_scores(const Eigen::MatrixXd& proba, std::span<const int> truth,
                           const std::vector<std::string>& roster);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& doc);

/// Rows sorted by accuracy (descending), then model, then features.
std::vector<EvalReport> summary(std::vector<EvalReport> reports);
/// CSV model,features,accuracy,eer_mean,train_seconds
void write_summary_csv(std::ostream& out, std::span<const EvalReport> rows);
void write_summary_text(std::ostream& out, std::span<const EvalReport> rows);

}  // namespace keyforge
