#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "keyforge/classifier.hpp"
#include "keyforge/error.hpp"
#include "keyforge/eval.hpp"
#include "support.hpp"

using namespace keyforge;

namespace {

double rate(const std::vector<double>& v, double t, bool accepted) {
  double n = 0;
  for (double s : v) n += accepted ? s <= t : s > t;
  return n / static_cast<double>(v.size());
}

// Exhaustive sweep over every distinct threshold, interpolating the first
// sign change of FAR - FRR.
double eer_oracle(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  std::vector<double> t(genuine);
  t.insert(t.end(), impostor.begin(), impostor.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  double far0 = 0.0, frr0 = 1.0;
  for (double thr : t) {
    const double far = rate(impostor, thr, true);
    const double frr = rate(genuine, thr, false);
    if (far - frr >= 0) {
      const double d0 = far0 - frr0, d1 = far - frr;
      const double a = d1 == d0 ? 0.0 : -d0 / (d1 - d0);
      return far0 + a * (far - far0);
    }
    far0 = far;
    frr0 = frr;
  }
  return far0;
}

EvalReport named(std::string model, std::string features, double acc) {
  EvalReport r;
  r.model = std::move(model);
  r.features = std::move(features);
  r.accuracy = acc;
  return r;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("accuracy and confusion with planted errors") {
  const std::vector<std::string> roster{"a", "b", "c"};
  const std::vector<int> truth{0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
  std::vector<int> pred = truth;
  pred[1] = 2;
  pred[4] = 0;
  pred[9] = 1;
  const EvalReport r = evaluate_predictions(roster, truth, pred);
  CHECK(r.accuracy == doctest::Approx(0.7));
  CHECK(r.confusion[0][2] == 1);
  CHECK(r.confusion[1][0] == 1);
  CHECK(r.confusion[2][1] == 1);
  CHECK(r.confusion[0][0] == 2);
  CHECK(r.confusion[2][2] == 3);
  long long off = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) off += i != j ? r.confusion[i][j] : 0;
  CHECK(off == 3);
  CHECK(r.recall[2] == doctest::Approx(0.75));
  CHECK(r.precision[0] == doctest::Approx(2.0 / 3.0));

  const EvalReport perfect = evaluate_predictions(roster, truth, truth);
  CHECK(perfect.accuracy == 1.0);

  Rng rng(3);
  std::vector<int> t(500), p(500);
  for (std::size_t i = 0; i < 500; ++i) {
    t[i] = static_cast<int>(rng.below(3));
    p[i] = static_cast<int>(rng.below(3));
  }
  int mismatches = 0;
  for (std::size_t i = 0; i < 500; ++i) mismatches += t[i] != p[i];
  CHECK(evaluate_predictions(roster, t, p).accuracy == doctest::Approx(1.0 - mismatches / 500.0));
}

TEST_CASE("EER hand fixtures") {
  const std::vector<double> g1{0.1, 0.4, 0.35}, i1{0.3, 0.8, 0.9};
  CHECK(roc_curve("a", g1, i1).eer == doctest::Approx(1.0 / 3.0));
  const std::vector<double> g2{1, 2, 5}, i2{3, 4};
  const RocCurve c2 = roc_curve("b", g2, i2);
  CHECK(c2.eer == doctest::Approx(1.0 / 3.0));
  CHECK(c2.eer == doctest::Approx(eer_oracle(g2, i2)));
  CHECK(c2.points.front().far == 0.0);
  CHECK(c2.points.front().frr == 1.0);

  const std::vector<double> low{0.1, 0.2, 0.3}, high{0.5, 0.6, 0.7};
  CHECK(roc_curve("c", low, high).eer == 0.0);
  CHECK(roc_curve("d", low, low).eer == doctest::Approx(0.5));
  const std::vector<double> ones(5, 1.0);
  CHECK(roc_curve("e", ones, ones).eer == doctest::Approx(0.5));
}

TEST_CASE("EER equals the exhaustive sweep on random fixtures; ROC is monotone") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> g(static_cast<std::size_t>(rng.integer(1, 12))), im(static_cast<std::size_t>(rng.integer(1, 30)));
    // Coarse grid so ties are frequent.
    for (auto& s : g) s = static_cast<double>(rng.integer(0, 10));
    for (auto& s : im) s = static_cast<double>(rng.integer(3, 15));
    const RocCurve c = roc_curve("s", g, im);
    CHECK(c.eer == doctest::Approx(eer_oracle(g, im)).epsilon(1e-12));
    for (std::size_t k = 1; k < c.points.size(); ++k) {
      CHECK(c.points[k].threshold > c.points[k - 1].threshold);
      CHECK(c.points[k].far >= c.points[k - 1].far);
      CHECK(c.points[k].frr <= c.points[k - 1].frr);
    }
    CHECK(c.points.back().far == 1.0);
    CHECK(c.points.back().frr == 0.0);
  }
}

TEST_CASE("EER is invariant under strictly monotonic transforms") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(10), im(40);
    for (auto& s : g) s = rng.normal(0.0, 1.0);
    for (auto& s : im) s = rng.normal(1.0, 1.0);
    const double base = roc_curve("x", g, im).eer;
    auto apply = [](std::vector<double> v, auto fn) {
      for (auto& s : v) s = fn(s);
      return v;
    };
    auto cube = [](double s) { return s * s * s + 4.0; };
    auto expo = [](double s) { return std::exp(2.0 * s); };
    CHECK(roc_curve("x", apply(g, cube), apply(im, cube)).eer == doctest::Approx(base).epsilon(1e-12));
    CHECK(roc_curve("x", apply(g, expo), apply(im, expo)).eer == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("mean EER is the unweighted mean of per-subject EERs") {
  Rng rng(9);
  ScoreSet set;
  for (int s = 0; s < 7; ++s) {
    SubjectScores sub;
    sub.subject = "s" + std::to_string(s);
    for (int i = 0; i < 5 + s; ++i) sub.genuine.push_back(rng.normal(0.0, 1.0));
    for (int i = 0; i < 20; ++i) sub.impostor.push_back(rng.normal(0.8, 1.0));
    set.subjects.push_back(sub);
  }
  const EerSummary summary = roc_and_eer(set);
  double total = 0;
  for (const auto& c : summary.curves) total += c.eer;
  CHECK(std::abs(summary.mean_eer - total / 7.0) <= 1e-12);
  SubjectScores empty;
  empty.subject = "none";
  empty.impostor = {1.0};
  set.subjects.push_back(empty);
  CHECK_THROWS_AS(roc_and_eer(set), EvaluationError);
}

TEST_CASE("summary ordering and output") {
  std::vector<EvalReport> reports{named("knn", "all", 0.82), named("gbt+aug2", "all", 0.96),
                                  named("gbt", "H", 0.77), named("gbt", "all", 0.95), named("rf", "all", 0.93)};
  const auto rows = summary(reports);
  CHECK(rows.front().model == "gbt+aug2");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i - 1].accuracy >= rows[i].accuracy);
  std::ostringstream a, b;
  write_summary_csv(a, rows);
  std::reverse(reports.begin(), reports.end());
  std::swap(reports[1], reports[3]);
  write_summary_csv(b, summary(reports));
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("model,features,accuracy,eer_mean,train_seconds\n", 0) == 0);
  CHECK(summary({named("only", "all", 0.5)}).size() == 1);
}

TEST_CASE("report JSON round trip") {
  const std::vector<std::string> roster{"a", "b"};
  const std::vector<int> t{0, 1, 1}, p{0, 1, 0};
  EvalReport r = evaluate_predictions(roster, t, p);
  r.model = "knn";
  r.features = "all";
  r.eer_mean = 0.125;
  r.seed = 42;
  r.config = {{"n_neighbors", 5}};
  const nlohmann::json j = report_to_json(r);
  for (const char* key : {"model", "features", "accuracy", "eer_mean", "confusion", "train_seconds", "seed", "config"})
    CHECK(j.contains(key));
  const EvalReport back = report_from_json(j);
  CHECK(back.accuracy == r.accuracy);
  CHECK(back.confusion == r.confusion);
  CHECK(*back.eer_mean == 0.125);
  CHECK(back.config == r.config);
}

TEST_CASE("accuracy_report matches subjects by name") {
  const Dataset ds = synth_fixture(4, 30, 3);
  const auto parts = split(ds, SplitSpec{0.8, 1, true});
  FitOptions o;
  o.family = Family::Knn;
  o.record_timing = false;
  const ClassifierModel model = fit_classifier(parts.train.select(FeatureGroup::All), FeatureGroup::All, o);
  const EvalReport r = accuracy_report(model, parts.test);
  CHECK(r.test_size == parts.test.size());
  CHECK(r.accuracy > 0.9);
  CHECK(r.eer_mean.has_value());

  // A test set whose roster is a permutation of the model's still lines up.
  std::vector<std::string> reversed(ds.roster().rbegin(), ds.roster().rend());
  const Dataset permuted(parts.test.records(), reversed);
  CHECK(accuracy_report(model, permuted).accuracy == r.accuracy);

  auto records = parts.test.records();
  records.front().subject = "intruder";
  CHECK_THROWS_AS(accuracy_report(model, Dataset(records)), EvaluationError);
}

}
