#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "keyforge/dataset.hpp"

namespace keyforge {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  double init_sigma = 1e-4;
  bool standardize = true;
  int kl_every = 50;  // KL is recorded every kl_every iterations and at the end
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 0;
};

/// Pairwise squared Euclidean distances between rows.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x);

struct Calibration {
  Eigen::MatrixXd conditional;  // row i: p(j | i), zero diagonal, rows sum to 1
  Eigen::MatrixXd joint;  // (C + C') / 2n, sums to 1
  std::vector<double> beta;  // Gaussian precision per row
};

/// Per-row bisection on the Gaussian precision until 2^H(row) is within
/// 1e-5 of the perplexity. Rows whose distances are all equal are uniform.
Calibration perplexity_calibrate(const Eigen::MatrixXd& sq_distances, double perplexity);

/// KL(P || Q) for the Student-t kernel on embedding Y (n x 2).
double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y);
/// Exact gradient of tsne_kl with respect to Y.
Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, unsigned threads = 1);

struct EmbeddingResult {
  Eigen::MatrixXd coords;  // n x 2
  std::vector<std::string> labels;
  double kl = 0.0;
  std::vector<std::pair<int, double>> kl_history;  // (iteration, KL)
  std::vector<std::string> warnings;
};

/// Gradient descent with momentum, per-coordinate gains and early
/// exaggeration. `initial`, when given, replaces the seeded Gaussian start.
EmbeddingResult tsne_run(const LabeledMatrix& data, const TsneConfig& cfg, const Eigen::MatrixXd* initial = nullptr);

/// Mean fraction of each point's k nearest embedded neighbours sharing its label.
double neighbor_purity(const Eigen::MatrixXd& coords, std::span<const int> labels, int k);

/// CSV subject,x,y followed by a "# kl=..." footer line.
void write_embedding_csv(std::ostream& out, const EmbeddingResult& result);

}  // namespace keyforge
