#include "keyforge/embed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "keyforge/csv.hpp"
#include "keyforge/error.hpp"
#include "keyforge/parallel.hpp"
#include "keyforge/random.hpp"
#include "keyforge/standardize.hpp"

namespace keyforge {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const auto n = x.rows();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) d(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  }
  return d;
}

Calibration perplexity_calibrate(const Eigen::MatrixXd& sq_distances, double perplexity) {
  const auto n = sq_distances.rows();
  if (sq_distances.cols() != n) throw ShapeError("distance matrix must be square");
  if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n)) {
    throw ConfigError("perplexity must lie in (0, n), got " + csv::format_double(perplexity) + " for n = " +
                      std::to_string(n));
  }
  if (!sq_distances.allFinite()) throw CalibrationError("distance matrix has non-finite entries");

  Calibration out;
  out.conditional = Eigen::MatrixXd::Zero(n, n);
  out.beta.assign(static_cast<std::size_t>(n), 1.0);
  std::vector<double> row(static_cast<std::size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    double lowest = std::numeric_limits<double>::infinity();
    double highest = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      lowest = std::min(lowest, sq_distances(i, j));
      highest = std::max(highest, sq_distances(i, j));
    }
    if (highest - lowest <= 0.0) {
      for (Eigen::Index j = 0; j < n; ++j) out.conditional(i, j) = j == i ? 0.0 : 1.0 / static_cast<double>(n - 1);
      out.beta[static_cast<std::size_t>(i)] = 0.0;
      continue;
    }

    double beta = 1.0 / (highest - lowest);
    double beta_lo = 0.0;
    double beta_hi = std::numeric_limits<double>::infinity();
    bool converged = false;
    double sum = 0.0;
    for (int step = 0; step < 200; ++step) {
      sum = 0.0;
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) {
          row[static_cast<std::size_t>(j)] = 0.0;
          continue;
        }
        const double shifted = sq_distances(i, j) - lowest;
        const double w = std::exp(-beta * shifted);
        row[static_cast<std::size_t>(j)] = w;
        sum += w;
        weighted += w * shifted;
      }
      const double entropy_bits = (std::log(sum) + beta * weighted / sum) / std::numbers::ln2;
      const double achieved = std::exp2(entropy_bits);
      if (std::abs(achieved - perplexity) < 1e-5) {
        converged = true;
        break;
      }
      if (achieved > perplexity) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = 0.5 * (beta + beta_lo);
      }
    }
    if (!converged) {
      throw CalibrationError("perplexity bisection did not converge for row " + std::to_string(i));
    }
    out.beta[static_cast<std::size_t>(i)] = beta;
    for (Eigen::Index j = 0; j < n; ++j) out.conditional(i, j) = row[static_cast<std::size_t>(j)] / sum;
  }
  out.joint = (out.conditional + out.conditional.transpose()) / (2.0 * static_cast<double>(n));
  return out;
}

namespace {

// Student-t affinities num(i, j) = 1 / (1 + |yi - yj|^2), zero diagonal.
// Returns their sum (the Q normalizer).
double student_kernel(const Eigen::MatrixXd& y, Eigen::MatrixXd& num, unsigned threads) {
  const auto n = y.rows();
  num.resize(n, n);
  std::vector<double> partial(static_cast<std::size_t>(n), 0.0);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t jj) {
    const auto j = static_cast<Eigen::Index>(jj);
    double s = 0.0;
    const double yj0 = y(j, 0);
    const double yj1 = y(j, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) {
        num(i, j) = 0.0;
        continue;
      }
      const double d0 = y(i, 0) - yj0;
      const double d1 = y(i, 1) - yj1;
      const double v = 1.0 / (1.0 + d0 * d0 + d1 * d1);
      num(i, j) = v;
      s += v;
    }
    partial[jj] = s;
  });
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

Eigen::MatrixXd gradient_from_kernel(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, const Eigen::MatrixXd& num,
                                     double z, double p_scale, unsigned threads) {
  const auto n = y.rows();
  Eigen::MatrixXd grad(n, 2);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    double g0 = 0.0;
    double g1 = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double v = num(j, i);
      const double mult = (p_scale * p(j, i) - v / z) * v;
      g0 += mult * (y(i, 0) - y(j, 0));
      g1 += mult * (y(i, 1) - y(j, 1));
    }
    grad(i, 0) = 4.0 * g0;
    grad(i, 1) = 4.0 * g1;
  });
  return grad;
}

double kl_from_kernel(const Eigen::MatrixXd& p, const Eigen::MatrixXd& num, double z) {
  const auto n = p.rows();
  double kl = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pij = p(i, j);
      if (i == j || pij <= 0.0) continue;
      kl += pij * std::log(pij / (num(i, j) / z));
    }
  }
  return std::max(kl, 0.0);
}

}  // namespace

double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd num;
  const double z = student_kernel(y, num, 1);
  return kl_from_kernel(p, num, z);
}

Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, unsigned threads) {
  Eigen::MatrixXd num;
  const double z = student_kernel(y, num, threads);
  return gradient_from_kernel(p, y, num, z, 1.0, threads);
}

EmbeddingResult tsne_run(const LabeledMatrix& data, const TsneConfig& cfg, const Eigen::MatrixXd* initial) {
  const auto n = static_cast<Eigen::Index>(data.rows());
  if (cfg.iterations < 1) throw ConfigError("t-SNE needs at least 1 iteration");
  EmbeddingResult result;
  if (static_cast<double>(n) < 3.0 * cfg.perplexity) {
    result.warnings.push_back("sample count " + std::to_string(n) + " is below 3 x perplexity");
  }
  const Eigen::MatrixXd x = cfg.standardize ? Standardizer::fit(data.x).apply(data.x) : data.x;
  const Calibration calibration = perplexity_calibrate(squared_distances(x), cfg.perplexity);
  const Eigen::MatrixXd& p = calibration.joint;

  Eigen::MatrixXd y(n, 2);
  if (initial) {
    if (initial->rows() != n || initial->cols() != 2) throw ShapeError("initial embedding must be n x 2");
    y = *initial;
  } else {
    Rng rng(cfg.seed);
    for (Eigen::Index i = 0; i < n; ++i) {
      y(i, 0) = rng.normal(0.0, cfg.init_sigma);
      y(i, 1) = rng.normal(0.0, cfg.init_sigma);
    }
  }

  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    // Optimizer state built up under exaggerated P overshoots badly once P
    // drops back; restart it at the phase boundary.
    if (iter > 0 && iter == cfg.exaggeration_iterations) {
      update.setZero();
      gains.setOnes();
    }
    const double z = student_kernel(y, num, cfg.threads);
    const bool exaggerating = iter < cfg.exaggeration_iterations;
    const Eigen::MatrixXd grad = gradient_from_kernel(p, y, num, z, exaggerating ? cfg.exaggeration : 1.0, cfg.threads);
    if (!grad.allFinite()) throw NumericError("non-finite t-SNE gradient at iteration " + std::to_string(iter));
    if (cfg.kl_every > 0 && iter % cfg.kl_every == 0) result.kl_history.emplace_back(iter, kl_from_kernel(p, num, z));

    const double momentum = iter < cfg.momentum_switch ? cfg.initial_momentum : cfg.final_momentum;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index d = 0; d < 2; ++d) {
        const bool same_sign = (grad(i, d) > 0.0) == (update(i, d) > 0.0);
        gains(i, d) = std::max(same_sign ? gains(i, d) * 0.8 : gains(i, d) + 0.2, 0.01);
        update(i, d) = momentum * update(i, d) - cfg.learning_rate * gains(i, d) * grad(i, d);
        y(i, d) += update(i, d);
      }
    }
    y.rowwise() -= y.colwise().mean();
  }

  const double z = student_kernel(y, num, cfg.threads);
  result.kl = kl_from_kernel(p, num, z);
  result.kl_history.emplace_back(cfg.iterations, result.kl);
  result.coords = std::move(y);
  for (int label : data.y) result.labels.push_back(data.roster[label]);
  return result;
}

double neighbor_purity(const Eigen::MatrixXd& coords, std::span<const int> labels, int k) {
  const auto n = coords.rows();
  if (n < 2 || k < 1) return 0.0;
  const auto kk = static_cast<std::size_t>(std::min<Eigen::Index>(k, n - 1));
  double total = 0.0;
  std::vector<std::pair<double, Eigen::Index>> dist;
  for (Eigen::Index i = 0; i < n; ++i) {
    dist.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dist.emplace_back((coords.row(i) - coords.row(j)).squaredNorm(), j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    std::size_t same = 0;
    for (std::size_t m = 0; m < kk; ++m) same += labels[static_cast<std::size_t>(dist[m].second)] == labels[static_cast<std::size_t>(i)];
    total += static_cast<double>(same) / static_cast<double>(kk);
  }
  return total / static_cast<double>(n);
}

void write_embedding_csv(std::ostream& out, const EmbeddingResult& result) {
  out << "subject,x,y\n";
  for (Eigen::Index i = 0; i < result.coords.rows(); ++i) {
    out << csv::quote(result.labels[static_cast<std::size_t>(i)]) << ',' << csv::format_double(result.coords(i, 0))
        << ',' << csv::format_double(result.coords(i, 1)) << '\n';
  }
  out << "# kl=" << csv::format_double(result.kl) << '\n';
}

}  // namespace keyforge
