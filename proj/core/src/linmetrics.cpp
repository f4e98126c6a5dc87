#include "spcagan/linmetrics.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace spcagan::linmetrics {

namespace {

constexpr double kRankTol = 1e-10;

struct Svd {
  Vector singular;
  Matrix v;
  Vector center;
};

Svd centered_svd(const Matrix& x) {
  if (!x.allFinite()) throw Error(ErrorKind::Numeric, "matrix contains non-finite values");
  Svd s;
  s.center = x.colwise().mean().transpose();
  const Matrix c = x.rowwise() - s.center.transpose();
  Eigen::BDCSVD<Matrix> svd(c, Eigen::ComputeThinV);
  s.singular = svd.singularValues();
  s.v = svd.matrixV();
  return s;
}

std::size_t numeric_rank(const Vector& singular) {
  if (singular.size() == 0 || singular(0) <= 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < singular.size(); ++i) {
    if (singular(i) > kRankTol * singular(0)) ++r;
  }
  return r;
}

Vector column_std(const Matrix& x, const Vector& mean) {
  return ((x.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(x.rows()))
      .sqrt()
      .transpose();
}

Matrix correlation(const Matrix& z) {
  const Matrix c = z.rowwise() - z.colwise().mean();
  const Vector norms = c.colwise().norm().transpose();
  Matrix r = c.transpose() * c;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      const double d = norms(i) * norms(j);
      r(i, j) = d > 1e-300 ? r(i, j) / d : 0.0;
    }
  }
  return r;
}

double rmse(const Vector& a, const Vector& b) {
  if (a.size() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

Vector upper_triangle(const Matrix& m) {
  const auto f = m.rows();
  Vector out(f * (f - 1) / 2);
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < f; ++i) {
    for (Eigen::Index j = i + 1; j < f; ++j) out(n++) = m(i, j);
  }
  return out;
}

}  // namespace

PcaBasis pca_fit(const Matrix& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto f = static_cast<std::size_t>(x.cols());
  if (n < 2) throw Error(ErrorKind::Range, "PCA needs at least two rows");
  if (k < 1 || k > std::min(n - 1, f)) {
    throw Error(ErrorKind::Range, "k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(n - 1, f)) + "]");
  }
  const auto s = centered_svd(x);
  if (numeric_rank(s.singular) < k) {
    throw Error(ErrorKind::Numeric, "data rank " + std::to_string(numeric_rank(s.singular)) + " is below k=" +
                                        std::to_string(k) + "; lower k");
  }
  PcaBasis b;
  const auto kk = static_cast<Eigen::Index>(k);
  b.center = s.center;
  b.loadings = s.v.leftCols(kk);
  b.explained_variance = s.singular.head(kk).array().square() / static_cast<double>(n - 1);
  for (Eigen::Index j = 0; j < kk; ++j) {
    Eigen::Index arg = 0;
    b.loadings.col(j).cwiseAbs().maxCoeff(&arg);
    if (b.loadings(arg, j) < 0) b.loadings.col(j) *= -1.0;
  }
  return b;
}

Vector explained_variances(const Matrix& x) {
  if (x.rows() < 2) throw Error(ErrorKind::Range, "PCA needs at least two rows");
  const auto s = centered_svd(x);
  const auto m = std::min<Eigen::Index>(x.rows() - 1, x.cols());
  return s.singular.head(m).array().square() / static_cast<double>(x.rows() - 1);
}

std::size_t elbow_k(const std::vector<double>& v) {
  if (v.empty()) throw Error(ErrorKind::Range, "elbow_k needs at least one value");
  const auto m = v.size();
  if (m < 3) return 1;
  const double span = v.front() - v.back();
  if (!(span > 0.0)) return 1;
  // Both axes normalized to [0, 1]; the chord runs from (0, 1) to (1, 0).
  std::size_t best = 0;
  double best_d = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(m - 1);
    const double y = (v[i] - v.back()) / span;
    const double d = std::abs(x + y - 1.0) / std::numbers::sqrt2;
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return std::max<std::size_t>(best, 1);
}

double spca_from_loadings(const Matrix& l, const Matrix& m) {
  if (l.rows() != m.rows()) throw Error(ErrorKind::Range, "loadings have different feature counts");
  return (l.transpose() * m).squaredNorm();
}

double spca(const Matrix& a, const Matrix& b, std::size_t k) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::Range, "spca: column counts differ (" + std::to_string(a.cols()) + " vs " +
                                      std::to_string(b.cols()) + ")");
  }
  return spca_from_loadings(pca_fit(a, k).loadings, pca_fit(b, k).loadings);
}

double silhouette(const Matrix& x, const Labels& labels) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) throw Error(ErrorKind::Range, "silhouette: labels and rows differ in length");
  if (n < 3) throw Error(ErrorKind::Range, "silhouette needs at least three points");
  std::map<int, std::size_t> ids;
  for (int l : labels) ids.emplace(l, 0);
  if (ids.size() < 2) throw Error(ErrorKind::Range, "silhouette needs at least two clusters");
  std::size_t next = 0;
  for (auto& [l, id] : ids) id = next++;
  std::vector<std::size_t> cluster(n), size(ids.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = ids[labels[i]];
    ++size[cluster[i]];
  }

  double total = 0.0;
  Vector sums(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const Vector d = (x.rowwise() - x.row(static_cast<Eigen::Index>(i))).rowwise().norm();
    sums.setZero();
    for (std::size_t j = 0; j < n; ++j) sums(static_cast<Eigen::Index>(cluster[j])) += d(static_cast<Eigen::Index>(j));
    const auto own = cluster[i];
    if (size[own] <= 1) continue;  // singleton contributes 0
    const double a = sums(static_cast<Eigen::Index>(own)) / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < size.size(); ++c) {
      if (c != own) b = std::min(b, sums(static_cast<Eigen::Index>(c)) / static_cast<double>(size[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

double similarity_score(const Matrix& real, const Matrix& synth) {
  if (real.cols() != synth.cols()) throw Error(ErrorKind::Range, "similarity_score: column counts differ");
  if (real.rows() < 2 || synth.rows() < 2) throw Error(ErrorKind::Range, "similarity_score needs two rows per side");
  if (!real.allFinite() || !synth.allFinite()) throw Error(ErrorKind::Numeric, "non-finite input to similarity_score");

  const Vector mean = real.colwise().mean().transpose();
  Vector sd = column_std(real, mean);
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (!(sd(j) > 0.0)) sd(j) = 1.0;
  }
  auto z = [&](const Matrix& m) -> Matrix {
    return (m.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
  };
  const Matrix zr = z(real), zs = z(synth);
  const Vector mr = zr.colwise().mean().transpose(), ms = zs.colwise().mean().transpose();
  const Vector sr = column_std(zr, mr), ss = column_std(zs, ms);
  const Vector cr = upper_triangle(correlation(zr)), cs = upper_triangle(correlation(zs));

  const double s_mean = 1.0 / (1.0 + rmse(mr, ms));
  const double s_std = 1.0 / (1.0 + rmse(sr, ss));
  const double s_corr = 1.0 / (1.0 + rmse(cr, cs));
  return (s_mean + s_std + s_corr) / 3.0;
}

Vector kde_curve(const Vector& x, const Vector& grid, double bandwidth) {
  if (x.size() == 0) throw Error(ErrorKind::Input, "kde_curve: empty sample");
  if (!(bandwidth > 0.0)) throw Error(ErrorKind::Range, "kde_curve: bandwidth must be positive");
  const double norm = 1.0 / (static_cast<double>(x.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  Vector out(grid.size());
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    out(g) = norm * ((x.array() - grid(g)) / bandwidth).square().unaryExpr([](double u) { return std::exp(-0.5 * u); }).sum();
  }
  return out;
}

double silverman_bandwidth(const Vector& x) {
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2) return 1.0;
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / (n - 1.0));
  std::vector<double> s(x.data(), x.data() + x.size());
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  if (!(spread > 0.0)) return 1.0;
  return 0.9 * spread * std::pow(n, -0.2);
}

FidelityScores fidelity(const Matrix& real, const Labels& real_labels, const Matrix& synth,
                        const Labels& synth_labels) {
  FidelityScores out;
  const auto vr = explained_variances(real);
  std::size_t k = elbow_k(std::vector<double>(vr.data(), vr.data() + vr.size()));
  const auto rank_r = numeric_rank(centered_svd(real).singular);
  const auto rank_s = synth.rows() >= 2 ? numeric_rank(centered_svd(synth).singular) : 0;
  k = std::min({k, rank_r, rank_s});
  out.k_used = k;
  out.spca = k > 0 ? spca(real, synth, k) : 0.0;
  out.similarity_score = similarity_score(real, synth);

  auto sil = [](const Matrix& x, const Labels& y) {
    std::map<int, std::size_t> counts;
    for (int l : y) ++counts[l];
    return counts.size() >= 2 && x.rows() >= 3 ? silhouette(x, y) : 0.0;
  };
  out.silhouette_real = sil(real, real_labels);
  out.silhouette_synth = sil(synth, synth_labels);
  return out;
}

}  // namespace spcagan::linmetrics
