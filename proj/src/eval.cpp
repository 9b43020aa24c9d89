#include "keyforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <unordered_map>

#include "keyforge/csv.hpp"
#include "keyforge/error.hpp"

namespace keyforge {

using nlohmann::json;

EvalReport evaluate_predictions(const std::vector<std::string>& roster, std::span<const int> truth,
                                std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction lengths differ");
  const std::size_t k = roster.size();
  EvalReport report;
  report.roster = roster;
  report.test_size = truth.size();
  report.confusion.assign(k, std::vector<long long>(k, 0));
  long long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++report.confusion[truth[i]][predicted[i]];
    if (truth[i] == predicted[i]) ++correct;
  }
  report.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  report.precision.assign(k, 0.0);
  report.recall.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    long long predicted_c = 0;
    long long actual_c = 0;
    for (std::size_t o = 0; o < k; ++o) {
      predicted_c += report.confusion[o][c];
      actual_c += report.confusion[c][o];
    }
    const auto hit = static_cast<double>(report.confusion[c][c]);
    report.precision[c] = predicted_c ? hit / static_cast<double>(predicted_c) : 0.0;
    report.recall[c] = actual_c ? hit / static_cast<double>(actual_c) : 0.0;
  }
  return report;
}

EvalReport accuracy_report(const ClassifierModel& model, const Dataset& test, unsigned threads) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < model.roster.size(); ++i) index.emplace(model.roster[i], static_cast<int>(i));
  std::vector<int> truth(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& subject = test.records()[i].subject;
    const auto it = index.find(subject);
    if (it == index.end()) throw EvaluationError("test subject '" + subject + "' is not in the model roster");
    truth[i] = it->second;
  }
  const LabeledMatrix view = test.select(model.features);
  const Eigen::MatrixXd proba = model.predict_proba(view.x, threads);
  EvalReport report = evaluate_predictions(model.roster, truth, argmax_rows(proba));
  report.model = model.name.empty() ? std::string(to_string(model.family())) : model.name;
  report.features = std::string(to_string(model.features));
  report.train_seconds = model.train_seconds;
  report.seed = model.seed;
  report.config = model.config();

  // Only subjects with both genuine and impostor test records can form a curve.
  ScoreSet scores = classifier_scores(proba, truth, model.roster);
  std::erase_if(scores.subjects, [](const SubjectScores& s) { return s.genuine.empty() || s.impostor.empty(); });
  if (!scores.subjects.empty()) report.eer_mean = roc_and_eer(scores).mean_eer;
  return report;
}

RocCurve roc_curve(std::string subject, std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw EvaluationError("subject '" + subject + "' needs at least one genuine and one impostor score");
  }
  std::vector<double> g(genuine.begin(), genuine.end());
  std::vector<double> im(impostor.begin(), impostor.end());
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  std::vector<double> thresholds;
  thresholds.reserve(g.size() + im.size());
  std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  RocCurve curve;
  curve.subject = std::move(subject);
  const auto n_g = static_cast<double>(g.size());
  const auto n_i = static_cast<double>(im.size());
  curve.points.push_back({-std::numeric_limits<double>::infinity(), 0.0, 1.0});
  std::size_t gi = 0;
  std::size_t ii = 0;
  for (double t : thresholds) {
    while (gi < g.size() && g[gi] <= t) ++gi;
    while (ii < im.size() && im[ii] <= t) ++ii;
    curve.points.push_back({t, static_cast<double>(ii) / n_i, (n_g - static_cast<double>(gi)) / n_g});
  }

  // FAR - FRR goes from -1 to +1; find the first point where it is >= 0.
  for (std::size_t p = 1; p < curve.points.size(); ++p) {
    const RocPoint& hi = curve.points[p];
    if (hi.far - hi.frr < 0.0) continue;
    const RocPoint& lo = curve.points[p - 1];
    const double d_lo = lo.far - lo.frr;
    const double d_hi = hi.far - hi.frr;
    const double alpha = d_hi == d_lo ? 1.0 : -d_lo / (d_hi - d_lo);
    curve.eer = lo.far + alpha * (hi.far - lo.far);
    curve.eer_threshold = std::isfinite(lo.threshold) ? lo.threshold + alpha * (hi.threshold - lo.threshold)
                                                      : hi.threshold;
    break;
  }
  return curve;
}

EerSummary roc_and_eer(const ScoreSet& scores) {
  if (scores.subjects.empty()) throw EvaluationError("no subjects to evaluate");
  EerSummary out;
  double total = 0.0;
  for (const auto& s : scores.subjects) {
    out.curves.push_back(roc_curve(s.subject, s.genuine, s.impostor));
    total += out.curves.back().eer;
  }
  out.mean_eer = total / static_cast<double>(out.curves.size());
  return out;
}

ScoreSet classifier_scores(const Eigen::MatrixXd& proba, std::span<const int> truth,
                           const std::vector<std::string>& roster) {
  ScoreSet set;
  set.subjects.resize(roster.size());
  for (std::size_t c = 0; c < roster.size(); ++c) {
    auto& entry = set.subjects[c];
    entry.subject = roster[c];
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const double s = 1.0 - proba(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      (truth[i] == static_cast<int>(c) ? entry.genuine : entry.impostor).push_back(s);
    }
  }
  return set;
}

json report_to_json(const EvalReport& r) {
  return {{"model", r.model},
          {"features", r.features},
          {"accuracy", r.accuracy},
          {"eer_mean", r.eer_mean ? json(*r.eer_mean) : json(nullptr)},
          {"roster", r.roster},
          {"confusion", r.confusion},
          {"precision", r.precision},
          {"recall", r.recall},
          {"test_size", r.test_size},
          {"train_seconds", r.train_seconds},
          {"seed", r.seed},
          {"config", r.config}};
}

EvalReport report_from_json(const json& doc) {
  try {
    EvalReport r;
    r.model = doc.at("model").get<std::string>();
    r.features = doc.at("features").get<std::string>();
    r.accuracy = doc.at("accuracy").get<double>();
    if (!doc.at("eer_mean").is_null()) r.eer_mean = doc.at("eer_mean").get<double>();
    r.confusion = doc.at("confusion").get<std::vector<std::vector<long long>>>();
    r.train_seconds = doc.at("train_seconds").get<double>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.config = doc.at("config");
    r.roster = doc.value("roster", std::vector<std::string>{});
    r.precision = doc.value("precision", std::vector<double>{});
    r.recall = doc.value("recall", std::vector<double>{});
    r.test_size = doc.value("test_size", std::size_t{0});
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

std::vector<EvalReport> summary(std::vector<EvalReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    if (a.model != b.model) return a.model < b.model;
    return a.features < b.features;
  });
  return reports;
}

void write_summary_csv(std::ostream& out, std::span<const EvalReport> rows) {
  out << "model,features,accuracy,eer_mean,train_seconds\n";
  for (const auto& r : rows) {
    out << csv::quote(r.model) << ',' << csv::quote(r.features) << ',' << csv::format_double(r.accuracy) << ','
        << (r.eer_mean ? csv::format_double(*r.eer_mean) : std::string()) << ','
        << csv::format_double(r.train_seconds) << '\n';
  }
}

void write_summary_text(std::ostream& out, std::span<const EvalReport> rows) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-4s %-16s %-8s %9s %9s %12s\n", "rank", "model", "features", "accuracy",
                "eer_mean", "train_s");
  out << line;
  int rank = 0;
  for (const auto& r : rows) {
    const std::string eer = r.eer_mean ? std::to_string(*r.eer_mean * 100.0).substr(0, 6) + "%" : "-";
    std::snprintf(line, sizeof(line), "%-4d %-16s %-8s %8.2f%% %9s %12.1f\n", ++rank, r.model.c_str(),
                  r.features.c_str(), r.accuracy * 100.0, eer.c_str(), r.train_seconds);
    out << line;
  }
}

}  // namespace keyforge
