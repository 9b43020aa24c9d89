#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "keyforge/error.hpp"
#include "keyforge/hyperopt.hpp"
#include "support.hpp"

using namespace keyforge;
using nlohmann::json;

namespace {

double quadratic(const Configuration& c, std::uint64_t) {
  const double x = c["x"].get<double>();
  return 1.0 - (x - 0.3) * (x - 0.3);
}

double median_gap(SearchMethod method) {
  const SearchSpace space = parse_space("x: Real(0, 1)");
  std::vector<double> gaps;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TuneOptions o;
    o.budget = 50;
    o.method = method;
    o.seed = seed;
    o.record_timing = false;
    gaps.push_back(1.0 - tune(space, quadratic, o).best_score);
  }
  std::sort(gaps.begin(), gaps.end());
  return 0.5 * (gaps[9] + gaps[10]);
}

}  // namespace

TEST_SUITE("hyperopt") {

TEST_CASE("space notation") {
  const SearchSpace s = parse_space(
      "# k-NN\n"
      "n_neighbors: [5, 50]\n"
      "p: [1, 2, 3]\n"
      "weight = uniform, distance\n"
      "max_depth: None, 5, 10\n"
      "C: Real(1e-6, 1e+6, log-uniform)\n"
      "n: Integer(1, 8)\n"
      "kernel: Categorical(linear, poly, rbf)\n");
  REQUIRE(s.dims.size() == 7);
  CHECK(std::get<IntegerRange>(s.dims[0].domain).lo == 5);
  CHECK(std::get<IntegerRange>(s.dims[0].domain).hi == 50);
  CHECK(std::get<Categorical>(s.dims[1].domain).choices == std::vector<json>{1, 2, 3});
  CHECK(std::get<Categorical>(s.dims[2].domain).choices == std::vector<json>{"uniform", "distance"});
  CHECK(std::get<Categorical>(s.dims[3].domain).choices.front().is_null());
  CHECK(std::get<RealRange>(s.dims[4].domain).log_uniform);
  CHECK(std::get<IntegerRange>(s.dims[5].domain).hi == 8);
  CHECK(std::get<Categorical>(s.dims[6].domain).choices.size() == 3);
  CHECK_THROWS_AS(parse_space("a: [5, 1]"), ConfigError);
  CHECK_THROWS_AS(parse_space("a: Real(0, 1, log-uniform)"), ConfigError);
  CHECK_THROWS_AS(parse_space("a: [1, 2]\na: [3, 4]"), ConfigError);
}

TEST_CASE("shipped space files match the built-in defaults") {
  const std::filesystem::path dir = KEYFORGE_SPACES_DIR;
  CHECK(load_space(dir / "knn.space").dims.size() == default_space(Family::Knn).dims.size());
  CHECK(load_space(dir / "forest.space").dims.size() == default_space(Family::Forest).dims.size());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(sample(load_space(dir / "knn.space"), seed) == sample(default_space(Family::Knn), seed));
    CHECK(sample(load_space(dir / "forest.space"), seed) == sample(default_space(Family::Forest), seed));
  }

  // degree stays in even though rbf ignores it.
  const SearchSpace svm = load_space(dir / "svm.space");
  REQUIRE(svm.dims.size() == 4);
  CHECK(std::get<RealRange>(svm.dims[0].domain).hi == 1e6);
  CHECK(std::get<RealRange>(svm.dims[1].domain).log_uniform);
  CHECK(std::get<IntegerRange>(svm.dims[2].domain).hi == 8);
  CHECK(std::get<Categorical>(svm.dims[3].domain).choices == std::vector<json>{"linear", "poly", "rbf"});
}

TEST_CASE("singleton space yields that configuration") {
  const SearchSpace s = parse_space("k: [7, 7]\nw: Categorical(distance)\nr: Real(0.5, 0.5)");
  const json expected = {{"k", 7}, {"w", "distance"}, {"r", 0.5}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(sample(s, seed) == expected);
  TuneOptions o;
  o.budget = 6;
  const auto r = tune(s, [](const Configuration&, std::uint64_t) { return 0.5; }, o);
  CHECK(r.best == expected);
}

TEST_CASE("log-uniform draws are uniform in log10") {
  const SearchSpace s = parse_space("C: Real(1e-6, 1e+6, log-uniform)");
  Rng rng(8);
  constexpr int kBins = 12;
  constexpr int kDraws = 100000;
  std::vector<int> bins(kBins, 0);
  for (int i = 0; i < kDraws; ++i) {
    const double v = std::log10(sample(s, rng)["C"].get<double>());
    REQUIRE(v >= -6.0);
    REQUIRE(v <= 6.0);
    ++bins[std::min(kBins - 1, static_cast<int>(v + 6.0))];
  }
  double chi2 = 0;
  for (int b : bins) chi2 += (b - kDraws / double(kBins)) * (b - kDraws / double(kBins)) / (kDraws / double(kBins));
  CHECK(chi2 < 31.3);  // chi-square 11 dof, p = 0.001
}

TEST_CASE("integer range stays in bounds and reaches its endpoints") {
  const SearchSpace s = parse_space("n_neighbors: [5, 50]");
  Rng rng(2);
  std::set<long long> seen;
  for (int i = 0; i < 5000; ++i) {
    const auto v = sample(s, rng)["n_neighbors"].get<long long>();
    REQUIRE(v >= 5);
    REQUIRE(v <= 50);
    seen.insert(v);
  }
  CHECK(seen.count(5) == 1);
  CHECK(seen.count(50) == 1);
  CHECK(seen.size() == 46);
}

TEST_CASE("budget is exact and the best is the earliest maximum") {
  const SearchSpace s = default_space(Family::Knn);
  for (auto method : {SearchMethod::Random, SearchMethod::Smbo}) {
    int calls = 0;
    TuneOptions o;
    o.budget = 23;
    o.method = method;
    const auto r = tune(s, [&](const Configuration& c, std::uint64_t) {
      ++calls;
      return c["p"].get<int>() == 2 ? 0.9 : 0.1;
    }, o);
    CHECK(calls == 23);
    CHECK(r.ledger.size() == 23);
    int first = -1;
    for (const auto& t : r.ledger) {
      if (t.score == 0.9 && first < 0) first = t.trial;
    }
    CHECK(r.best_trial == first);
    CHECK(r.best == r.ledger[static_cast<std::size_t>(first)].params);
  }
}

TEST_CASE("budget 1 returns the single sampled configuration") {
  TuneOptions o;
  o.budget = 1;
  const auto r = tune(default_space(Family::Forest), [](const Configuration&, std::uint64_t) { return 0.3; }, o);
  REQUIRE(r.ledger.size() == 1);
  CHECK(r.best == r.ledger[0].params);
  CHECK(r.best_score == 0.3);
  o.budget = 0;
  CHECK_THROWS_AS(tune(default_space(Family::Forest), quadratic, o), ConfigError);
}

TEST_CASE("ledgers are reproducible and worker-count independent") {
  const SearchSpace s = default_space(Family::Gbt);
  auto objective = [](const Configuration& c, std::uint64_t seed) {
    return std::fmod(c["learning_rate"].get<double>() * 7.0 + static_cast<double>(seed % 13) * 0.01, 1.0);
  };
  for (auto method : {SearchMethod::Random, SearchMethod::Smbo}) {
    TuneOptions o;
    o.budget = 30;
    o.method = method;
    o.seed = 77;
    o.record_timing = false;
    std::ostringstream a, b;
    write_ledger_csv(a, tune(s, objective, o).ledger);
    o.workers = 4;
    write_ledger_csv(b, tune(s, objective, o).ledger);
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("trial,params_json,score,seconds\n", 0) == 0);
  }
}

TEST_CASE("failing trials are recorded, not fatal") {
  TuneOptions o;
  o.budget = 10;
  o.record_timing = false;
  const auto r = tune(default_space(Family::Knn), [](const Configuration& c, std::uint64_t) -> double {
    if (c["weight"] == "uniform") throw TrainingError("boom");
    return 0.5;
  }, o);
  CHECK(r.ledger.size() == 10);
  for (const auto& t : r.ledger) {
    if (t.failed) {
      CHECK(t.score == 0.0);
      CHECK(t.error.find("boom") != std::string::npos);
    }
  }
}

TEST_CASE("smbo falls back to prior sampling when all scores are equal") {
  const SearchSpace s = default_space(Family::Knn);
  std::vector<TrialRecord> ledger;
  for (int i = 0; i < 12; ++i) {
    TrialRecord t;
    t.trial = i;
    t.params = sample(s, static_cast<std::uint64_t>(i));
    t.score = 0.4;
    ledger.push_back(t);
  }
  Rng a(5), b(5);
  for (int k = 0; k < 10; ++k) CHECK(propose_smbo(s, ledger, 0.25, 24, a) == sample(s, b));
}

TEST_CASE("smbo concentrates near the optimum of a quadratic") {
  CHECK(median_gap(SearchMethod::Smbo) <= median_gap(SearchMethod::Random));
}

}
