#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "keyforge/dataset.hpp"

namespace keyforge {

enum class KnnWeight { Uniform, Distance };

std::string_view to_string(KnnWeight weight);
KnnWeight parse_knn_weight(std::string_view text);

struct KnnConfig {
  int n_neighbors = 5;
  KnnWeight weight = KnnWeight::Distance;
  int p = 1;  // Minkowski exponent, one of 1, 2, 3
};

struct KnnModel {
  KnnConfig config;
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::size_t n_classes = 0;
};

KnnModel knn_fit(const LabeledMatrix& train, const KnnConfig& cfg);

/// Class probabilities, one row per query. Neighbours are ranked by
/// (distance, training index). With distance weighting, any neighbour at
/// distance 0 takes all of the mass.
Eigen::MatrixXd knn_predict(const KnnModel& model, const Eigen::MatrixXd& x, unsigned threads = 0);

/// Minkowski distance with exponent p in {1, 2, 3}.
double minkowski(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                 const Eigen::Ref<const Eigen::RowVectorXd>& b, int p);

}  // namespace keyforge
