#include "spcagan/augment.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numbers>

using namespace spcagan;
using namespace spcagan::augment;
using features::FeatureMatrix;

namespace {

// Class c has counts[c] rows centred at (3c, -c, ...).
FeatureMatrix toy(const std::vector<std::size_t>& counts, Eigen::Index f, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMatrix fm;
  std::size_t n = 0;
  for (auto c : counts) n += c;
  fm.values = testing::gaussian(static_cast<Eigen::Index>(n), f, rng);
  Eigen::Index r = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i, ++r) {
      fm.values(r, 0) += 3.0 * static_cast<double>(c);
      fm.values(r, 1) -= static_cast<double>(c);
      fm.labels.push_back(static_cast<int>(c));
    }
  }
  for (Eigen::Index j = 0; j < f; ++j) fm.feature_names.push_back("f" + std::to_string(j));
  return fm;
}

std::vector<std::size_t> rows_with(const FeatureMatrix& fm, int cls, std::size_t limit) {
  std::vector<std::size_t> r;
  for (std::size_t i = 0; i < limit; ++i) {
    if (fm.labels[i] == cls) r.push_back(i);
  }
  return r;
}

// True when p lies on a segment from some class row to one of its k nearest
// class neighbours (brute-force neighbour search).
bool on_smote_segment(const RowVector& p, const Matrix& cls, std::size_t k) {
  const auto n = cls.rows();
  for (Eigen::Index b = 0; b < n; ++b) {
    std::vector<std::pair<double, Eigen::Index>> d;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != b) d.emplace_back((cls.row(j) - cls.row(b)).squaredNorm(), j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t t = 0; t < k; ++t) {
      const RowVector seg = cls.row(d[t].second) - cls.row(b);
      const double lambda = (p - cls.row(b)).dot(seg) / seg.squaredNorm();
      if (lambda < -1e-12 || lambda > 1 + 1e-12) continue;
      if ((cls.row(b) + lambda * seg - p).norm() < 1e-9) return true;
    }
  }
  return false;
}

double gaussian_mle_loglik(const Matrix& x, double ridge) {
  const auto n = static_cast<double>(x.rows());
  const RowVector mu = x.colwise().mean();
  const Matrix c = x.rowwise() - mu;
  Matrix cov = c.transpose() * c / n;
  cov.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(cov);
  const double log_det = ldlt.vectorD().array().log().sum();
  double total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector d = c.row(i).transpose();
    total += -0.5 * (static_cast<double>(x.cols()) * std::log(2 * std::numbers::pi) + log_det + d.dot(ldlt.solve(d)));
  }
  return total;
}

AugmentPlan plan_for(Method m, const FeatureMatrix& fm, std::uint64_t seed) {
  AugmentPlan p;
  p.method = m;
  p.per_class_target = balance_targets(fm);
  p.seed = seed;
  p.k_neighbors = 3;
  return p;
}

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("balance targets lift minority classes to the majority") {
    const auto fm = toy({40, 10, 25}, 3, 1);
    const auto t = balance_targets(fm);
    CHECK(t.at(1) == 40);
    CHECK(t.at(2) == 40);
    CHECK(t.count(0) == 0);
    CHECK(balance_targets(fm, 0.5).at(2) == 25);
    CHECK_THROWS_AS(balance_targets(fm, 0.0), Error);
  }

  TEST_CASE("every method hits the per-class targets exactly") {
    const auto fm = toy({60, 12, 20}, 3, 2);
    for (auto m : {Method::ROS, Method::SMOTE, Method::GMM, Method::NOISE}) {
      CAPTURE(to_string(m));
      auto p = plan_for(m, fm, 5);
      p.per_class_target[1] = 33;
      const auto out = apply(fm, p);
      const auto counts = out.class_counts();
      CHECK(counts[0] == 60);
      CHECK(counts[1] == 33);
      CHECK(counts[2] == 60);
      CHECK(out.values.topRows(fm.values.rows()) == fm.values);
      CHECK(out.values.allFinite());
      CHECK(hash_matrix(apply(fm, p).values) == hash_matrix(out.values));
    }
  }

  TEST_CASE("ROS copies are verbatim rows of their own class") {
    const auto fm = toy({30, 4, 7}, 4, 3);
    const auto out = ros(fm, plan_for(Method::ROS, fm, 1));
    for (std::size_t i = fm.rows(); i < out.rows(); ++i) {
      const auto src = rows_with(fm, out.labels[i], fm.rows());
      const bool found = std::any_of(src.begin(), src.end(), [&](std::size_t r) {
        return out.values.row(static_cast<Eigen::Index>(i)) == fm.values.row(static_cast<Eigen::Index>(r));
      });
      CHECK(found);
    }
  }

  TEST_CASE("SMOTE points lie on neighbour segments") {
    const auto fm = toy({50, 8, 11}, 3, 4);
    const auto p = plan_for(Method::SMOTE, fm, 2);
    const auto out = smote(fm, p);
    for (int cls : {1, 2}) {
      const auto src = rows_with(fm, cls, fm.rows());
      Matrix cx(static_cast<Eigen::Index>(src.size()), fm.values.cols());
      for (std::size_t i = 0; i < src.size(); ++i) cx.row(static_cast<Eigen::Index>(i)) = fm.values.row(static_cast<Eigen::Index>(src[i]));
      for (std::size_t i = fm.rows(); i < out.rows(); ++i) {
        if (out.labels[i] == cls) CHECK(on_smote_segment(out.values.row(static_cast<Eigen::Index>(i)), cx, p.k_neighbors));
      }
    }
    auto tight = p;
    tight.k_neighbors = 8;
    CHECK_THROWS_AS(smote(fm, tight), Error);
  }

  TEST_CASE("smote_point and nearest_neighbors") {
    RowVector a(2), b(2);
    a << 0, 0;
    b << 2, 4;
    CHECK(smote_point(a, b, 0.25).isApprox((RowVector(2) << 0.5, 1.0).finished()));
    Matrix x(4, 1);
    x << 0, 1, -1, 5;
    CHECK(nearest_neighbors(x, 0, 2) == std::vector<std::size_t>{1, 2});  // tie broken by index
    CHECK(nearest_neighbors(x, 3, 1) == std::vector<std::size_t>{1});
  }

  TEST_CASE("single-component GMM reaches the closed-form Gaussian likelihood") {
    Rng rng(6);
    const Matrix x = testing::gaussian(80, 4, rng) * testing::orthonormal(4, 4, rng);
    const auto g = fit_gmm(x, 1, 3);
    const double oracle = gaussian_mle_loglik(x, kGmmRidge);
    CHECK(std::abs(g.log_likelihood - oracle) <= 1e-6 * std::max(1.0, std::abs(oracle)));
    double dens = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) dens += g.log_density(x.row(i));
    CHECK(dens == doctest::Approx(oracle).epsilon(1e-9));
  }

  TEST_CASE("EM never decreases the likelihood") {
    Rng rng(7);
    Matrix x = testing::gaussian(150, 2, rng);
    x.topRows(75).array() += 4.0;
    const auto g = fit_gmm(x, 2, 11);
    for (std::size_t i = 1; i < g.trace.size(); ++i) CHECK(g.trace[i] >= g.trace[i - 1] - 1e-8);
    CHECK(g.weights.sum() == doctest::Approx(1.0));
    CHECK_THROWS_AS(fit_gmm(x.topRows(5), 2, 1), Error);
  }

  TEST_CASE("noise jitter has the configured scale") {
    // One source row per minority class, so every jitter is a known offset.
    auto fm = toy({400, 1}, 2, 8);
    AugmentPlan p = plan_for(Method::NOISE, fm, 9);
    p.sigma = 0.2;
    p.per_class_target[1] = 4001;
    const auto out = noise_jitter(fm, p);
    const RowVector src = fm.values.row(400);
    const RowVector mean = fm.values.colwise().mean();
    const RowVector sd = ((fm.values.rowwise() - mean).array().square().colwise().mean()).sqrt();
    const Matrix jitter = out.values.bottomRows(4000).rowwise() - src;
    for (Eigen::Index j = 0; j < 2; ++j) {
      // E|N(0, s^2)| = s * sqrt(2 / pi)
      const double expected = p.sigma * sd(j) * std::sqrt(2.0 / std::numbers::pi);
      CHECK(jitter.col(j).cwiseAbs().mean() == doctest::Approx(expected).epsilon(0.05));
    }
    p.sigma = 0.0;
    const auto flat = noise_jitter(fm, p);
    CHECK((flat.values.bottomRows(4000).rowwise() - src).isZero());
  }

  TEST_CASE("plans below the current count are rejected") {
    const auto fm = toy({20, 6}, 2, 9);
    AugmentPlan p;
    p.per_class_target[1] = 3;
    CHECK_THROWS_AS(ros(fm, p), Error);
    p.per_class_target = {{5, 10}};
    CHECK_THROWS_AS(ros(fm, p), Error);
  }
}
