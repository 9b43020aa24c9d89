#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "keyforge/dataset.hpp"
#include "keyforge/random.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(KEYFORGE_FIXTURE_DIR) / name;
}

/// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::path(KEYFORGE_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline keyforge::LabeledMatrix random_matrix(std::size_t rows, std::size_t cols, std::size_t classes,
                                             std::uint64_t seed) {
  keyforge::Rng rng(seed);
  keyforge::LabeledMatrix m;
  m.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.x.rows(); ++i)
    for (Eigen::Index j = 0; j < m.x.cols(); ++j) m.x(i, j) = rng.normal();
  for (std::size_t i = 0; i < rows; ++i) m.y.push_back(static_cast<int>(i % classes));
  for (std::size_t c = 0; c < classes; ++c) m.roster.push_back("c" + std::to_string(c));
  for (std::size_t j = 0; j < cols; ++j) m.columns.push_back("f" + std::to_string(j));
  return m;
}

}  // namespace testing
