#pragma once

#include <Eigen/Dense>

namespace keyforge {

/// Per-column z-score fitted on one matrix and replayed on others.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;  // population std; columns with zero spread get 1

  bool empty() const { return mean.size() == 0; }

  static Standardizer fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

inline Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  Standardizer s;
  s.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean;
  s.scale = (centered.array().square().colwise().sum() / static_cast<double>(std::max<Eigen::Index>(x.rows(), 1)))
                .sqrt()
                .matrix();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale[j] > 1e-12)) s.scale[j] = 1.0;
  }
  return s;
}

inline Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  if (empty()) return x;
  return (x.rowwise() - mean).array().rowwise() / scale.array();
}

}  // namespace keyforge
