#include "spcagan/linmetrics.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>

using namespace spcagan;
using namespace spcagan::linmetrics;
using testing::gaussian;
using testing::orthonormal;

namespace {

// Top-k eigenvectors of the sample covariance.
Matrix eig_loadings(const Matrix& x, Eigen::Index k) {
  const Matrix c = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Matrix> es(c.transpose() * c);
  return es.eigenvectors().rightCols(k).rowwise().reverse();
}

// Sum of squared cosines of the principal angles between two subspaces.
double principal_angle_oracle(const Matrix& a, const Matrix& b, Eigen::Index k) {
  Eigen::JacobiSVD<Matrix> svd(eig_loadings(a, k).transpose() * eig_loadings(b, k));
  return svd.singularValues().squaredNorm();
}

// Data with a dominant k-dimensional subspace spanned by `basis`.
Matrix planted(const Matrix& basis, Eigen::Index n, Rng& rng) {
  const auto k = basis.cols();
  Matrix scores = gaussian(n, k, rng);
  for (Eigen::Index j = 0; j < k; ++j) scores.col(j) *= 10.0 * static_cast<double>(k - j);
  return scores * basis.transpose() + gaussian(n, basis.rows(), rng, 0.1);
}

double brute_silhouette(const Matrix& x, const Labels& y) {
  const auto n = x.rows();
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> acc;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      auto& [s, c] = acc[y[static_cast<std::size_t>(j)]];
      s += (x.row(i) - x.row(j)).norm();
      ++c;
    }
    const int own = y[static_cast<std::size_t>(i)];
    if (!acc.count(own)) continue;
    const double a = acc[own].first / acc[own].second;
    double b = 1e300;
    for (const auto& [l, sc] : acc) {
      if (l != own) b = std::min(b, sc.first / sc.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("linmetrics") {
  TEST_CASE("pca loadings are orthonormal, sign-fixed and sorted") {
    Rng rng(1);
    const Matrix x = planted(orthonormal(6, 3, rng), 200, rng);
    const auto b = pca_fit(x, 3);
    CHECK((b.loadings.transpose() * b.loadings - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
    for (Eigen::Index j = 0; j < 3; ++j) {
      Eigen::Index arg;
      b.loadings.col(j).cwiseAbs().maxCoeff(&arg);
      CHECK(b.loadings(arg, j) > 0);
    }
    CHECK(b.explained_variance(0) >= b.explained_variance(1));
    CHECK(b.explained_variance(1) >= b.explained_variance(2));
    const Vector all = explained_variances(x);
    CHECK(all.size() == 6);
    CHECK(all.head(3).isApprox(b.explained_variance, 1e-10));
  }

  TEST_CASE("spca basic identities") {
    Rng rng(2);
    const Matrix a = gaussian(50, 6, rng);
    CHECK(spca(a, a, 3) == doctest::Approx(3.0).epsilon(1e-12));
    const Matrix q = orthonormal(6, 6, rng);
    CHECK(std::abs(spca(a, a * q, 3) - spca(a * q, a, 3)) < 1e-8);
    // Orthogonal planted subspaces.
    const Matrix basis = orthonormal(6, 4, rng);
    Matrix p = basis.leftCols(2), r = basis.rightCols(2);
    const Matrix xa = planted(p, 300, rng), xb = planted(r, 300, rng);
    CHECK(spca(xa, xb, 2) < 1e-3);
    CHECK_THROWS_AS(spca(a, gaussian(50, 5, rng), 2), Error);
  }

  TEST_CASE("spca agrees with the principal-angle oracle and stays in range") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      const Eigen::Index k = 1 + t % 4;
      const Matrix a = gaussian(40, 7, rng), b = gaussian(35, 7, rng);
      const double v = spca(a, b, static_cast<std::size_t>(k));
      CHECK(v >= -1e-12);
      CHECK(v <= static_cast<double>(k) + 1e-12);
      CHECK(std::abs(v - principal_angle_oracle(a, b, k)) < 1e-8);
    }
  }

  TEST_CASE("silhouette matches the brute-force definition") {
    Rng rng(4);
    for (int t = 0; t < 10; ++t) {
      const Matrix x = gaussian(25, 3, rng);
      Labels y(25);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>((i * 7 + t) % 3);
      y[0] = 9;  // a singleton cluster
      CHECK(silhouette(x, y) == doctest::Approx(brute_silhouette(x, y)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(silhouette(gaussian(5, 2, rng), Labels(5, 1)), Error);
  }

  TEST_CASE("elbow picks the last component before the drop") {
    CHECK(elbow_k({10, 9, 8, 1, 0.5, 0.2}) == 3);
    CHECK(elbow_k({10, 1, 0.9, 0.8, 0.7}) == 1);
    CHECK(elbow_k({5, 5, 5}) == 1);
    CHECK(elbow_k({3}) == 1);
    CHECK_THROWS_AS(elbow_k({}), Error);
  }

  TEST_CASE("similarity score is 1 for identical data and drops with a shift") {
    Rng rng(5);
    const Matrix a = gaussian(100, 4, rng);
    CHECK(similarity_score(a, a) == doctest::Approx(1.0));
    const double shifted = similarity_score(a, a.array() + 3.0);
    CHECK(shifted < 0.8);
    CHECK(shifted > 0.0);
  }

  TEST_CASE("kde integrates to one") {
    Rng rng(6);
    const Vector x = gaussian(200, 1, rng);
    const double h = silverman_bandwidth(x);
    CHECK(h > 0);
    CHECK(silverman_bandwidth(Vector::Constant(10, 2.0)) == 1.0);
    const Vector grid = Vector::LinSpaced(4001, -10, 10);
    const Vector d = kde_curve(x, grid, h);
    CHECK((d.array() >= 0).all());
    CHECK(d.sum() * (20.0 / 4000.0) == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("fidelity caps k by rank and scores both silhouettes") {
    Rng rng(7);
    const Matrix basis = orthonormal(5, 2, rng);
    const Matrix real = planted(basis, 80, rng), synth = planted(basis, 60, rng);
    Labels yr(80), ys(60);
    for (std::size_t i = 0; i < yr.size(); ++i) yr[i] = static_cast<int>(i % 2);
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = static_cast<int>(i % 2);
    const auto f = fidelity(real, yr, synth, ys);
    CHECK(f.k_used >= 1);
    CHECK(f.spca <= static_cast<double>(f.k_used) + 1e-12);
    CHECK(f.spca > 0.9 * static_cast<double>(f.k_used));
    const auto single = fidelity(real, yr, synth, Labels(60, 1));
    CHECK(single.silhouette_synth == 0.0);
  }
}
