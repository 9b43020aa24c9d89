#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "keyforge/error.hpp"
#include "keyforge/knn.hpp"
#include "support.hpp"

using namespace keyforge;

TEST_SUITE("dataset") {

TEST_CASE("two-row fixture is ingested verbatim") {
  const Dataset ds = ingest_csv(testing::fixture("two_rows.csv"));
  REQUIRE(ds.size() == 2);
  CHECK(ds.roster() == std::vector<std::string>{"s002", "s003"});
  const auto& a = ds.records()[0];
  CHECK(a.subject == "s002");
  CHECK(a.session == 1);
  CHECK(a.rep == 1);
  CHECK(a.features[0] == 0.1491);
  CHECK(a.features[1] == 0.3979);
  CHECK(a.features[11] == 1.0468);
  CHECK(a.features[30] == 0.0742);
  const auto& b = ds.records()[1];
  CHECK(b.rep == 2);
  CHECK(b.features[12] == 0.1130);
  CHECK(b.features[23] == -0.0054);

  // Every cell of the file, re-parsed independently.
  std::ifstream in(testing::fixture("two_rows.csv"));
  std::string line;
  std::getline(in, line);
  for (std::size_t r = 0; r < 2; ++r) {
    std::getline(in, line);
    std::stringstream cells(line);
    std::string cell;
    for (int skip = 0; skip < 3; ++skip) std::getline(cells, cell, ',');
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
      std::getline(cells, cell, ',');
      CHECK(ds.records()[r].features[c] == std::stod(cell));
    }
  }
}

TEST_CASE("ingest errors") {
  CHECK_THROWS_AS(ingest_csv(testing::fixture("header_only.csv")), EmptyDatasetError);
  CHECK_THROWS_AS(ingest_csv(testing::fixture("reordered.csv")), SchemaError);
  try {
    ingest_csv(testing::fixture("bad_cell.csv"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
}

TEST_CASE("serialize round trip") {
  const Dataset ds = synth_fixture(3, 7, 11);
  std::stringstream buf;
  write_dataset_csv(buf, ds);
  const Dataset back = read_dataset_csv(buf);
  CHECK(back.records() == ds.records());
  CHECK(back.roster() == ds.roster());
}

TEST_CASE("feature groups partition the header") {
  CHECK(group_columns(FeatureGroup::All).size() == 31);
  CHECK(group_columns(FeatureGroup::H).size() == 11);
  CHECK(group_columns(FeatureGroup::DD).size() == 10);
  CHECK(group_columns(FeatureGroup::UD).size() == 10);
  std::set<std::size_t> seen;
  for (auto g : {FeatureGroup::H, FeatureGroup::DD, FeatureGroup::UD}) {
    for (std::size_t c : group_columns(g)) {
      CHECK(seen.insert(c).second);
      const std::string_view name = timing_columns()[c];
      const std::string_view prefix = g == FeatureGroup::H ? "H." : g == FeatureGroup::DD ? "DD." : "UD.";
      CHECK(name.substr(0, prefix.size()) == prefix);
    }
  }
  CHECK(seen.size() == 31);
}

TEST_CASE("H view of the fixture row is its 11 H cells in order") {
  const Dataset ds = ingest_csv(testing::fixture("two_rows.csv"));
  const LabeledMatrix h = select_features(ds, FeatureGroup::H);
  REQUIRE(h.cols() == 11);
  REQUIRE(h.rows() == 2);
  const double expected[11] = {0.1491, 0.1069, 0.1169, 0.1417, 0.1146, 0.1067,
                               0.1016, 0.1349, 0.0932, 0.1338, 0.0742};
  for (int j = 0; j < 11; ++j) CHECK(h.x(0, j) == expected[j]);
  CHECK(h.columns.front() == "H.period");
  CHECK(h.columns.back() == "H.Return");
  const LabeledMatrix all = ds.select(FeatureGroup::All);
  CHECK(all.cols() == 31);
  for (int j = 0; j < 31; ++j) CHECK(all.x(1, j) == ds.records()[1].features[j]);
}

TEST_CASE("stratified split counts") {
  const Dataset ds = synth_fixture(4, 400, 3);
  const auto parts = split(ds, SplitSpec{0.8, 42, true});
  CHECK(parts.train.size() == 1280);
  CHECK(parts.test.size() == 320);
  std::map<std::string, int> train_count, test_count;
  for (const auto& r : parts.train.records()) ++train_count[r.subject];
  for (const auto& r : parts.test.records()) ++test_count[r.subject];
  for (const auto& s : ds.roster()) {
    CHECK(train_count[s] == 320);
    CHECK(test_count[s] == 80);
  }
  CHECK(parts.train.roster() == ds.roster());

  // Disjoint and covering: every (subject, session, rep) exactly once.
  std::multiset<std::tuple<std::string, int, int>> keys;
  for (const auto* half : {&parts.train, &parts.test})
    for (const auto& r : half->records()) keys.emplace(r.subject, r.session, r.rep);
  std::multiset<std::tuple<std::string, int, int>> original;
  for (const auto& r : ds.records()) original.emplace(r.subject, r.session, r.rep);
  CHECK(keys == original);

  const auto again = split(ds, SplitSpec{0.8, 42, true});
  CHECK(again.train.records() == parts.train.records());
  CHECK(again.test.records() == parts.test.records());
}

TEST_CASE("split edge cases") {
  const Dataset ds = synth_fixture(2, 10, 3);
  const auto all = split(ds, SplitSpec{1.0, 1, true});
  CHECK(all.train.size() == 20);
  CHECK(all.test.empty());
  const Dataset odd = synth_fixture(3, 7, 5);
  for (double f : {0.3, 0.5, 0.8}) {
    const auto parts = split(odd, SplitSpec{f, 9, true});
    std::map<std::string, int> n;
    for (const auto& r : parts.train.records()) ++n[r.subject];
    for (const auto& [s, count] : n) {
      CHECK(count >= static_cast<int>(std::floor(7 * f)));
      CHECK(count <= static_cast<int>(std::ceil(7 * f)));
    }
  }
  CHECK_THROWS_AS(split(ds, SplitSpec{0.0, 1, true}), ConfigError);
}

TEST_CASE("fixed KDS index map") {
  FeatureVector f;
  for (std::size_t i = 0; i < kFeatureCount; ++i) f[i] = static_cast<double>(i);
  const FixedKds kds = to_fixed_kds(f);
  // Row k holds (H_k, DD_k,k+1, UD_k,k+1) = columns (3k, 3k+1, 3k+2).
  const double expected[11][3] = {{0, 1, 2},    {3, 4, 5},    {6, 7, 8},    {9, 10, 11},
                                  {12, 13, 14}, {15, 16, 17}, {18, 19, 20}, {21, 22, 23},
                                  {24, 25, 26}, {27, 28, 29}, {30, 0, 0}};
  for (std::size_t r = 0; r < 11; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(kds(r, c) == expected[r][c]);

  const FixedKds zero = to_fixed_kds(FeatureVector{});
  for (const auto& row : zero.cells)
    for (double v : row) CHECK(v == 0.0);

  const Dataset ds = synth_fixture(3, 20, 8);
  for (const auto& r : ds.records()) CHECK(from_fixed_kds(to_fixed_kds(r)) == r.features);
}

TEST_CASE("augment count invariants and delta bounds") {
  const Dataset base = synth_fixture(5, 40, 2);
  const AugmentConfig cfg{2, 0.02, 17};
  const Dataset out = augment(base, cfg);
  REQUIRE(out.size() == 3 * base.size());
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(out.records()[i] == base.records()[i]);
  CHECK(augment(base, cfg).records() == out.records());
  CHECK(augment(base, AugmentConfig{0, 0.02, 17}).records() == base.records());

  // Collect >= 1e5 deltas; each synthetic row copies its source's labels.
  std::vector<double> deltas;
  const std::size_t n = base.size();
  for (std::size_t i = n; i < out.size(); ++i) {
    const auto& src = base.records()[i % n];
    const auto& syn = out.records()[i];
    CHECK(syn.subject == src.subject);
    CHECK(syn.session == src.session);
    CHECK(syn.rep == src.rep);
    for (std::size_t c = 0; c < kFeatureCount; ++c) deltas.push_back(syn.features[c] - src.features[c]);
  }
  Dataset big = augment(base, AugmentConfig{16, 0.02, 5});
  for (std::size_t i = n; i < big.size(); ++i)
    for (std::size_t c = 0; c < kFeatureCount; ++c)
      deltas.push_back(big.records()[i].features[c] - base.records()[i % n].features[c]);
  REQUIRE(deltas.size() >= 100000);
  constexpr int kBins = 20;
  std::vector<int> bins(kBins, 0);
  for (double d : deltas) {
    REQUIRE(d > -0.02);
    REQUIRE(d < 0.02);
    ++bins[std::min(kBins - 1, static_cast<int>((d + 0.02) / 0.04 * kBins))];
  }
  const double expected = static_cast<double>(deltas.size()) / kBins;
  double chi2 = 0;
  for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
  CHECK(chi2 < 43.8);  // chi-square 19 dof, p = 0.001
}

TEST_CASE("one-hot labels") {
  const Eigen::MatrixXd single = one_hot_labels(std::vector<int>{0, 0, 0}, 1);
  CHECK(single.cols() == 1);
  CHECK(single.sum() == 3.0);
  const Dataset ds = synth_fixture(51, 2, 1);
  const Eigen::MatrixXd m = one_hot_labels(ds);
  CHECK(m.cols() == 51);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    CHECK(m.row(i).sum() == 1.0);
    CHECK(m(i, ds.label(static_cast<std::size_t>(i))) == 1.0);
  }
  const Eigen::MatrixXd third = one_hot_labels(std::vector<int>{3}, 5);
  CHECK(third(0, 3) == 1.0);
  CHECK(third.sum() == 1.0);
}

TEST_CASE("explore statistics") {
  std::vector<KeystrokeRecord> recs(3);
  const double h0[3] = {0.1, 0.2, 0.6};
  for (int i = 0; i < 3; ++i) {
    recs[i].subject = "a";
    recs[i].rep = i + 1;
    recs[i].features.fill(0.5);
    recs[i].features[0] = h0[i];
  }
  const Dataset ds(recs);
  const std::vector<std::string> who{"a"};
  const auto traces = explore_stats(ds, FeatureGroup::H, who);
  REQUIRE(traces.size() == 1);
  REQUIRE(traces[0].mean.size() == 11);
  CHECK(traces[0].mean[0] == doctest::Approx(0.3));
  // sample std of {0.1, 0.2, 0.6}: sqrt((0.04 + 0.01 + 0.09) / 2)
  CHECK(traces[0].stddev[0] == doctest::Approx(std::sqrt(0.07)));
  CHECK(traces[0].mean[1] == doctest::Approx(0.5));
  CHECK(traces[0].stddev[1] == 0.0);

  const Dataset six = synth_fixture(8, 5, 3);
  std::vector<std::string> pick(six.roster().begin(), six.roster().begin() + 6);
  const auto t6 = explore_stats(six, FeatureGroup::H, pick);
  CHECK(t6.size() == 6);
  for (const auto& t : t6) CHECK(t.mean.size() == 11);
  std::ostringstream csv;
  write_traces_csv(csv, t6);
  CHECK(csv.str().rfind("subject,column_name,mean,std\n", 0) == 0);
  const std::vector<std::string> ghost{"nobody"};
  CHECK_THROWS_AS(explore_stats(six, FeatureGroup::H, ghost), LookupError);
}

TEST_CASE("synthetic fixture") {
  const Dataset a = synth_fixture(2, 5, 77);
  CHECK(a.size() == 10);
  CHECK(a.roster().size() == 2);
  CHECK(synth_fixture(2, 5, 77).records() == a.records());
  CHECK(synth_fixture(2, 5, 78).records() != a.records());

  const Dataset ds = synth_fixture(7, 400, 42);
  const auto parts = split(ds, SplitSpec{0.8, 42, true});
  const auto train = parts.train.select(FeatureGroup::All);
  const auto test = parts.test.select(FeatureGroup::All);
  const KnnModel model = knn_fit(train, KnnConfig{1, KnnWeight::Uniform, 2});
  const Eigen::MatrixXd proba = knn_predict(model, test.x);
  int correct = 0;
  for (Eigen::Index i = 0; i < proba.rows(); ++i) {
    Eigen::Index best;
    proba.row(i).maxCoeff(&best);
    correct += best == test.y[static_cast<std::size_t>(i)];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(proba.rows()) > 0.95);
}

}
