#pragma once

#include "spcagan/common.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace spcagan::testing {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  return Matrix::NullaryExpr(rows, cols, [&] { return nd(rng); });
}

// Random F x k matrix with orthonormal columns.
inline Matrix orthonormal(Eigen::Index f, Eigen::Index k, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(f, f, rng));
  return Matrix(qr.householderQ()).leftCols(k);
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("spcagan_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-12, std::abs(a), std::abs(b)}); }

}  // namespace spcagan::testing
