#include <doctest.h>

#include <numeric>
#include <sstream>

#include "keyforge/embed.hpp"
#include "keyforge/error.hpp"
#include "support.hpp"

using namespace keyforge;

namespace {

double row_entropy_bits(const Eigen::MatrixXd& p, Eigen::Index i) {
  double h = 0;
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    if (p(i, j) > 0) h -= p(i, j) * std::log2(p(i, j));
  return h;
}

LabeledMatrix blobs(std::size_t per_class, std::size_t classes, std::uint64_t seed) {
  auto m = testing::random_matrix(per_class * classes, 4, classes, seed);
  for (Eigen::Index i = 0; i < m.x.rows(); ++i) m.x.row(i).array() += 6.0 * m.y[static_cast<std::size_t>(i)];
  return m;
}

}  // namespace

TEST_SUITE("embed") {

TEST_CASE("equal distances give uniform rows") {
  const Eigen::MatrixXd d = Eigen::MatrixXd::Ones(6, 6) - Eigen::MatrixXd::Identity(6, 6);
  const Calibration c = perplexity_calibrate(d, 3.0);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) CHECK(c.conditional(i, j) == doctest::Approx(i == j ? 0.0 : 0.2));
}

TEST_CASE("row entropies match the perplexity") {
  const auto pts = testing::random_matrix(5, 3, 1, 4);
  const Calibration c = perplexity_calibrate(squared_distances(pts.x), 3.0);
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(std::abs(row_entropy_bits(c.conditional, i) - std::log2(3.0)) < 1e-4);
    CHECK(c.conditional(i, i) == 0.0);
    CHECK(c.conditional.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto big = testing::random_matrix(80, 6, 1, 5);
  const Calibration c2 = perplexity_calibrate(squared_distances(big.x), 30.0);
  for (Eigen::Index i = 0; i < 80; ++i) CHECK(std::abs(row_entropy_bits(c2.conditional, i) - std::log2(30.0)) < 1e-4);
  CHECK_THROWS_AS(perplexity_calibrate(squared_distances(pts.x), 5.0), ConfigError);
}

TEST_CASE("joint P is symmetric and sums to one") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto pts = testing::random_matrix(25, 4, 1, seed);
    const Calibration c = perplexity_calibrate(squared_distances(pts.x), 7.0);
    CHECK((c.joint - c.joint.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.joint.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.joint.minCoeff() >= 0.0);
  }
}

TEST_CASE("KL gradient matches central differences") {
  const auto pts = testing::random_matrix(10, 3, 1, 9);
  const Eigen::MatrixXd p = perplexity_calibrate(squared_distances(pts.x), 3.0).joint;
  Rng rng(1);
  Eigen::MatrixXd y(10, 2);
  for (auto& v : y.reshaped()) v = rng.normal();
  const Eigen::MatrixXd grad = tsne_gradient(p, y);
  const double h = 1e-6;
  double worst = 0;
  for (Eigen::Index i = 0; i < 10; ++i) {
    for (Eigen::Index d = 0; d < 2; ++d) {
      Eigen::MatrixXd up = y, down = y;
      up(i, d) += h;
      down(i, d) -= h;
      const double numeric = (tsne_kl(p, up) - tsne_kl(p, down)) / (2 * h);
      worst = std::max(worst, std::abs(numeric - grad(i, d)) / std::max({std::abs(numeric), std::abs(grad(i, d)), 1e-8}));
    }
  }
  CHECK(worst < 1e-3);
  CHECK((tsne_gradient(p, y, 4) - grad).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("KL is non-negative and non-increasing after exaggeration") {
  const auto data = blobs(30, 3, 6);
  TsneConfig cfg;
  cfg.perplexity = 30;
  cfg.kl_every = 50;
  cfg.threads = 2;
  const EmbeddingResult r = tsne_run(data, cfg);
  REQUIRE(r.coords.rows() == 90);
  REQUIRE(r.kl_history.size() >= 10);
  double previous = std::numeric_limits<double>::infinity();
  for (const auto& [iteration, kl] : r.kl_history) {
    CHECK(kl >= 0.0);
    if (iteration >= cfg.exaggeration_iterations + 50) CHECK(kl <= previous + 1e-9);
    if (iteration >= cfg.exaggeration_iterations) previous = kl;
  }
  CHECK(neighbor_purity(r.coords, data.y, 10) > 0.9);
}

TEST_CASE("deterministic and thread-count independent") {
  const auto data = blobs(10, 3, 2);
  TsneConfig cfg;
  cfg.perplexity = 5;
  cfg.iterations = 200;
  cfg.threads = 1;
  const auto a = tsne_run(data, cfg);
  cfg.threads = 3;
  const auto b = tsne_run(data, cfg);
  CHECK(a.coords == b.coords);
}

TEST_CASE("duplicated point embeds onto its twin") {
  auto data = blobs(30, 3, 12);
  data.x.conservativeResize(91, Eigen::NoChange);
  data.x.row(90) = data.x.row(7);
  data.y.push_back(data.y[7]);
  TsneConfig cfg;
  cfg.perplexity = 30;
  const auto r = tsne_run(data, cfg);
  CHECK((r.coords.row(90) - r.coords.row(7)).norm() < 1e-3);
}

TEST_CASE("permuting the input permutes the output") {
  const auto data = blobs(30, 3, 4);
  const Eigen::Index n = data.x.rows();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(3);
  rng.shuffle(std::span<int>(perm));
  auto at = [&](Eigen::Index i) { return perm[static_cast<std::size_t>(i)]; };
  Rng init_rng(11);
  Eigen::MatrixXd init(n, 2);
  for (auto& v : init.reshaped()) v = 1e-4 * init_rng.normal();

  LabeledMatrix shuffled = data;
  Eigen::MatrixXd init_shuffled(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    shuffled.x.row(i) = data.x.row(at(i));
    shuffled.y[static_cast<std::size_t>(i)] = data.y[static_cast<std::size_t>(at(i))];
    init_shuffled.row(i) = init.row(at(i));
  }

  const Eigen::MatrixXd p = perplexity_calibrate(squared_distances(data.x), 30).joint;
  const Eigen::MatrixXd ps = perplexity_calibrate(squared_distances(shuffled.x), 30).joint;
  double worst_p = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) worst_p = std::max(worst_p, std::abs(ps(i, j) - p(at(i), at(j))));
  CHECK(worst_p < 1e-15);

  // The early phase amplifies rounding differences from the changed
  // summation order exponentially, so trajectories are compared over a
  // short horizon only.
  TsneConfig cfg;
  cfg.perplexity = 30;
  cfg.iterations = 20;
  const auto a = tsne_run(data, cfg, &init);
  const auto b = tsne_run(shuffled, cfg, &init_shuffled);
  double worst = 0;
  for (Eigen::Index i = 0; i < n; ++i) worst = std::max(worst, (b.coords.row(i) - a.coords.row(at(i))).norm());
  CHECK(worst < 1e-6);
  CHECK(b.labels[0] == a.labels[static_cast<std::size_t>(at(0))]);
}

TEST_CASE("small inputs warn, purity and CSV output") {
  const auto data = blobs(5, 2, 1);
  TsneConfig cfg;
  cfg.perplexity = 5;
  cfg.iterations = 100;
  const auto r = tsne_run(data, cfg);
  CHECK(!r.warnings.empty());
  std::ostringstream out;
  write_embedding_csv(out, r);
  const std::string text = out.str();
  CHECK(text.rfind("subject,x,y\n", 0) == 0);
  CHECK(text.find("# kl=") != std::string::npos);

  Eigen::MatrixXd coords(4, 2);
  coords << 0, 0, 0.1, 0, 5, 5, 5.1, 5;
  const std::vector<int> labels{0, 0, 1, 0};
  // k = 1: points 0 and 1 are each other's neighbours; 2 and 3 disagree.
  CHECK(neighbor_purity(coords, labels, 1) == doctest::Approx(0.5));
}

}
