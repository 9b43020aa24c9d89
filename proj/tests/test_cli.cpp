#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = keyforge::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Runs a small pipeline into `dir` and returns it.
fs::path pipeline(const fs::path& dir) {
  const std::string d = dir.string();
  REQUIRE(run({"synth", "--subjects", "4", "--reps", "40", "--seed", "5", "--out", d + "/data.csv"}).code == 0);
  REQUIRE(run({"split", "--input", d + "/data.csv", "--out", d + "/split", "--seed", "5"}).code == 0);
  REQUIRE(run({"train", "--input", d + "/split/train.csv", "--model", "gbt", "--param", "n_estimators=5",
               "--augment-ratio", "1", "--out", d + "/gbt.json", "--no-timing", "--quiet", "--seed", "5"}).code == 0);
  REQUIRE(run({"train", "--input", d + "/split/train.csv", "--model", "rf", "--param", "n_estimators=5",
               "--out", d + "/rf.bin", "--no-timing", "--threads", "2", "--seed", "5"}).code == 0);
  REQUIRE(run({"eval", "--model-file", d + "/gbt.json", "--input", d + "/split/test.csv", "--out", d + "/gbt_report.json"}).code == 0);
  REQUIRE(run({"eval", "--model-file", d + "/rf.bin", "--input", d + "/split/test.csv", "--out", d + "/rf_report.json"}).code == 0);
  REQUIRE(run({"report", "--inputs", d + "/gbt_report.json", d + "/rf_report.json", "--out", d + "/summary.csv"}).code == 0);
  REQUIRE(run({"tune", "--input", d + "/split/train.csv", "--model", "knn", "--budget", "8", "--out", d + "/ledger.csv",
               "--no-timing", "--quiet", "--seed", "5"}).code == 0);
  REQUIRE(run({"eer", "--input", d + "/data.csv", "--metric", "all", "--out", d + "/scores.csv", "--report",
               d + "/eer.json", "--seed", "5"}).code == 0);
  REQUIRE(run({"tsne", "--input", d + "/data.csv", "--per-subject", "15", "--perplexity", "10", "--iterations", "120",
               "--out", d + "/tsne.csv", "--seed", "5"}).code == 0);
  REQUIRE(run({"explore", "--input", d + "/data.csv", "--features", "H", "--count", "3", "--out", d + "/traces.csv", "--seed", "5"}).code == 0);
  return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("identical flags and seed give byte-identical artifacts") {
  const fs::path a = pipeline(testing::scratch("cli_a"));
  const fs::path b = pipeline(testing::scratch("cli_b"));
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    std::string left = testing::slurp(entry.path());
    std::string right = testing::slurp(b / rel);
    // Provenance embeds the command line, which names the scratch directory.
    const auto strip = [](std::string s, const std::string& dir) {
      for (std::size_t pos; (pos = s.find(dir)) != std::string::npos;) s.replace(pos, dir.size(), "<dir>");
      return s;
    };
    left = strip(left, a.string());
    right = strip(right, b.string());
    CHECK_MESSAGE(left == right, rel.string());
    ++compared;
  }
  CHECK(compared >= 20);
  CHECK(fs::exists(a / "ledger.csv.prov.json"));
  CHECK(testing::slurp(a / "gbt_report.json").find("\"command\"") != std::string::npos);
  CHECK(testing::slurp(a / "split/train.csv.prov.json").find("keyforge split") != std::string::npos);
  CHECK(line_count(testing::slurp(a / "ledger.csv")) == 9);
}

TEST_CASE("augment with ratio 0 copies the input byte for byte") {
  const fs::path dir = testing::scratch("cli_aug");
  const std::string d = dir.string();
  REQUIRE(run({"synth", "--subjects", "3", "--reps", "10", "--out", d + "/in.csv"}).code == 0);
  REQUIRE(run({"augment", "--input", d + "/in.csv", "--ratio", "0", "--out", d + "/out.csv"}).code == 0);
  CHECK(testing::slurp(dir / "in.csv") == testing::slurp(dir / "out.csv"));
  REQUIRE(run({"augment", "--input", d + "/in.csv", "--augment-ratio", "2", "--out", d + "/x3.csv"}).code == 0);
  CHECK(line_count(testing::slurp(dir / "x3.csv")) == 1 + 90);
}

TEST_CASE("tune with budget 50 writes a 50-row ledger") {
  const fs::path dir = testing::scratch("cli_tune");
  const std::string d = dir.string();
  REQUIRE(run({"synth", "--subjects", "4", "--reps", "30", "--out", d + "/in.csv"}).code == 0);
  const Result r = run({"tune", "--input", d + "/in.csv", "--model", "knn", "--budget", "50", "--method", "smbo",
                        "--out", d + "/ledger.csv", "--best-out", d + "/best.json", "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(line_count(testing::slurp(dir / "ledger.csv")) == 51);
  CHECK(r.out.find("seed=42") != std::string::npos);
  const auto best = nlohmann::json::parse(testing::slurp(dir / "best.json"));
  CHECK(best.contains("n_neighbors"));
  CHECK(run({"train", "--input", d + "/in.csv", "--model", "knn", "--config", d + "/best.json", "--out", d + "/m.json"}).code == 0);
}

TEST_CASE("seed resolution: flag, then environment, then default") {
  const fs::path dir = testing::scratch("cli_seed");
  const std::string d = dir.string();
  REQUIRE(run({"synth", "--subjects", "2", "--reps", "5", "--seed", "9", "--out", d + "/flag.csv"}).code == 0);
  ::setenv("KEYFORGE_SEED", "9", 1);
  const Result env = run({"synth", "--subjects", "2", "--reps", "5", "--out", d + "/env.csv"});
  ::unsetenv("KEYFORGE_SEED");
  REQUIRE(env.code == 0);
  CHECK(env.out.find("seed=9") != std::string::npos);
  CHECK(testing::slurp(dir / "flag.csv") == testing::slurp(dir / "env.csv"));
  const Result def = run({"synth", "--subjects", "2", "--reps", "5", "--out", d + "/def.csv"});
  CHECK(def.out.find("seed=42") != std::string::npos);
}

TEST_CASE("exit codes and error lines") {
  CHECK(run({}).code == 2);
  CHECK(run({"train", "--bogus"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"split", "--input", "/nonexistent.csv", "--out", "x"}).code == 2);
  CHECK(run({"train", "--input", testing::fixture("two_rows.csv").string(), "--model", "svm", "--out", "m"}).code == 2);

  const Result empty = run({"ingest", "--input", testing::fixture("header_only.csv").string()});
  CHECK(empty.code == 1);
  CHECK(empty.err.rfind("error: ", 0) == 0);
  CHECK(line_count(empty.err) == 1);
  const Result schema = run({"ingest", "--input", testing::fixture("reordered.csv").string()});
  CHECK(schema.code == 1);
  CHECK(schema.err.rfind("error: schema: ", 0) == 0);
  const Result parse = run({"ingest", "--input", testing::fixture("bad_cell.csv").string()});
  CHECK(parse.err.rfind("error: parse: ", 0) == 0);
  const Result ok = run({"ingest", "--input", testing::fixture("two_rows.csv").string()});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("records=2 subjects=2 columns=31") != std::string::npos);
}

}
