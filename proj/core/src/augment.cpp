#include "spcagan/augment.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace spcagan::augment {

using features::FeatureMatrix;

std::string to_string(Method m) {
  switch (m) {
    case Method::ROS: return "ROS";
    case Method::SMOTE: return "SMOTE";
    case Method::GMM: return "GMM";
    case Method::NOISE: return "NOISE";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::ROS, Method::SMOTE, Method::GMM, Method::NOISE}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

void AugmentPlan::validate(const FeatureMatrix& fm) const {
  if (k_neighbors < 1) throw Error(ErrorKind::Spec, "k_neighbors must be >= 1");
  if (n_components < 1) throw Error(ErrorKind::Spec, "n_components must be >= 1");
  if (!(sigma >= 0.0)) throw Error(ErrorKind::Spec, "sigma must be >= 0");
  const auto counts = fm.class_counts();
  for (const auto& [cls, target] : per_class_target) {
    if (cls < 0) throw Error(ErrorKind::Spec, "negative class in augmentation targets");
    const std::size_t have = static_cast<std::size_t>(cls) < counts.size() ? counts[static_cast<std::size_t>(cls)] : 0;
    if (target < have) {
      throw Error(ErrorKind::Spec, "target " + std::to_string(target) + " for class " + std::to_string(cls) +
                                       " is below its current count " + std::to_string(have));
    }
    if (have == 0 && target > 0) {
      throw Error(ErrorKind::Input, "class " + std::to_string(cls) + " has no rows to augment");
    }
  }
}

std::map<int, std::size_t> balance_targets(const FeatureMatrix& fm, double ratio) {
  if (!(ratio > 0.0)) throw Error(ErrorKind::Spec, "balance ratio must be positive");
  const auto counts = fm.class_counts();
  std::map<int, std::size_t> t;
  if (counts.empty()) return t;
  const auto goal = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(counts[0])));
  for (std::size_t c = 1; c < counts.size(); ++c) {
    if (counts[c] > 0) t[static_cast<int>(c)] = std::max(counts[c], goal);
  }
  return t;
}

namespace {

std::vector<std::size_t> rows_of(const FeatureMatrix& fm, int cls) {
  std::vector<std::size_t> r;
  for (std::size_t i = 0; i < fm.labels.size(); ++i) {
    if (fm.labels[i] == cls) r.push_back(i);
  }
  return r;
}

struct Additions {
  std::vector<RowVector> rows;
  Labels labels;
};

FeatureMatrix append(const FeatureMatrix& fm, const Additions& add) {
  if (add.rows.empty()) return fm;
  FeatureMatrix out;
  out.feature_names = fm.feature_names;
  out.labels = fm.labels;
  out.values.resize(fm.values.rows() + static_cast<Eigen::Index>(add.rows.size()), fm.values.cols());
  out.values.topRows(fm.values.rows()) = fm.values;
  for (std::size_t i = 0; i < add.rows.size(); ++i) {
    out.values.row(fm.values.rows() + static_cast<Eigen::Index>(i)) = add.rows[i];
  }
  out.labels.insert(out.labels.end(), add.labels.begin(), add.labels.end());
  return out;
}

// Calls gen(class_rows, need, rng, additions) for every class with a deficit.
template <typename Gen>
FeatureMatrix augment_each(const FeatureMatrix& fm, const AugmentPlan& plan, Gen gen) {
  fm.validate();
  plan.validate(fm);
  const auto counts = fm.class_counts();
  Additions add;
  for (const auto& [cls, target] : plan.per_class_target) {
    const std::size_t have = static_cast<std::size_t>(cls) < counts.size() ? counts[static_cast<std::size_t>(cls)] : 0;
    const std::size_t need = target - have;
    if (need == 0) continue;
    Rng rng(derive_seed(plan.seed, static_cast<std::uint64_t>(cls)));
    const auto before = add.rows.size();
    gen(cls, rows_of(fm, cls), need, rng, add.rows);
    add.labels.insert(add.labels.end(), add.rows.size() - before, cls);
  }
  return append(fm, add);
}

}  // namespace

FeatureMatrix ros(const FeatureMatrix& fm, const AugmentPlan& plan) {
  return augment_each(fm, plan, [&](int, const std::vector<std::size_t>& rows, std::size_t need, Rng& rng,
                                    std::vector<RowVector>& out) {
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    for (std::size_t i = 0; i < need; ++i) out.push_back(fm.values.row(static_cast<Eigen::Index>(rows[pick(rng)])));
  });
}

RowVector smote_point(const RowVector& x, const RowVector& neighbor, double lambda) {
  return x + lambda * (neighbor - x);
}

std::vector<std::size_t> nearest_neighbors(const Matrix& x, std::size_t i, std::size_t k) {
  const Vector d = (x.rowwise() - x.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm();
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < static_cast<std::size_t>(x.rows()); ++j) {
    if (j != i) idx.push_back(j);
  }
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    const double da = d(static_cast<Eigen::Index>(a)), db = d(static_cast<Eigen::Index>(b));
    return da < db || (da == db && a < b);
  });
  idx.resize(k);
  return idx;
}

FeatureMatrix smote(const FeatureMatrix& fm, const AugmentPlan& plan) {
  return augment_each(fm, plan, [&](int cls, const std::vector<std::size_t>& rows, std::size_t need, Rng& rng,
                                    std::vector<RowVector>& out) {
    if (rows.size() < plan.k_neighbors + 1) {
      throw Error(ErrorKind::Input, "SMOTE: class " + std::to_string(cls) + " has " + std::to_string(rows.size()) +
                                        " rows, needs at least k_neighbors+1 = " +
                                        std::to_string(plan.k_neighbors + 1));
    }
    Matrix cx(static_cast<Eigen::Index>(rows.size()), fm.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) cx.row(static_cast<Eigen::Index>(i)) = fm.values.row(static_cast<Eigen::Index>(rows[i]));
    std::vector<std::vector<std::size_t>> nn(rows.size());
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_nn(0, plan.k_neighbors - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t s = 0; s < need; ++s) {
      const auto b = pick(rng);
      if (nn[b].empty()) nn[b] = nearest_neighbors(cx, b, plan.k_neighbors);
      const auto n = nn[b][pick_nn(rng)];
      const double lambda = unit(rng);
      out.push_back(smote_point(cx.row(static_cast<Eigen::Index>(b)), cx.row(static_cast<Eigen::Index>(n)), lambda));
    }
  });
}

FeatureMatrix noise_jitter(const FeatureMatrix& fm, const AugmentPlan& plan) {
  const Vector mean = fm.values.colwise().mean().transpose();
  const Vector sd = fm.values.rows() > 0
                        ? Vector(((fm.values.rowwise() - mean.transpose()).array().square().colwise().sum() /
                                  static_cast<double>(fm.values.rows()))
                                     .sqrt()
                                     .transpose())
                        : Vector::Zero(fm.values.cols());
  return augment_each(fm, plan, [&](int, const std::vector<std::size_t>& rows, std::size_t need, Rng& rng,
                                    std::vector<RowVector>& out) {
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t s = 0; s < need; ++s) {
      RowVector r = fm.values.row(static_cast<Eigen::Index>(rows[pick(rng)]));
      if (plan.sigma > 0.0) {
        for (Eigen::Index j = 0; j < r.size(); ++j) r(j) += plan.sigma * sd(j) * normal(rng);
      }
      out.push_back(std::move(r));
    }
  });
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct Component {
  Eigen::LLT<Matrix> chol;
  double log_det = 0;
};

Component factor(const Matrix& cov) {
  Component c;
  c.chol.compute(cov);
  if (c.chol.info() != Eigen::Success) throw Error(ErrorKind::Numeric, "GMM covariance is not positive definite");
  c.log_det = 2.0 * c.chol.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return c;
}

// Row-wise log N(x; mean, cov).
Vector log_gauss(const Matrix& x, const Vector& mean, const Component& c) {
  Matrix d = (x.rowwise() - mean.transpose()).transpose();
  c.chol.matrixL().solveInPlace(d);
  const double f = static_cast<double>(x.cols());
  return (-0.5 * (d.colwise().squaredNorm().array() + f * kLog2Pi + c.log_det)).transpose();
}

double log_sum_exp(const RowVector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

double GaussianMixture::log_density(const RowVector& x) const {
  RowVector parts(weights.size());
  for (Eigen::Index c = 0; c < weights.size(); ++c) {
    const auto comp = factor(covariances[static_cast<std::size_t>(c)]);
    parts(c) = std::log(weights(c)) + log_gauss(x, means[static_cast<std::size_t>(c)], comp)(0);
  }
  return log_sum_exp(parts);
}

Matrix GaussianMixture::sample(std::size_t n, Rng& rng) const {
  const auto f = means.empty() ? 0 : means[0].size();
  Matrix out(static_cast<Eigen::Index>(n), f);
  std::vector<Matrix> lower;
  for (const auto& cov : covariances) lower.push_back(factor(cov).chol.matrixL().toDenseMatrix());
  std::discrete_distribution<std::size_t> comp(weights.data(), weights.data() + weights.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(f);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = comp(rng);
    for (Eigen::Index j = 0; j < f; ++j) z(j) = normal(rng);
    out.row(static_cast<Eigen::Index>(i)) = (means[c] + lower[c] * z).transpose();
  }
  return out;
}

GaussianMixture fit_gmm(const Matrix& x, std::size_t n_components, std::uint64_t seed, std::size_t max_iter,
                        double tol) {
  const auto n = x.rows();
  const auto f = x.cols();
  const auto k = static_cast<Eigen::Index>(n_components);
  if (n_components < 1) throw Error(ErrorKind::Spec, "n_components must be >= 1");
  if (static_cast<std::size_t>(n) < n_components * static_cast<std::size_t>(f + 1)) {
    throw Error(ErrorKind::Input, "GMM needs at least n_components*(F+1) = " +
                                      std::to_string(n_components * static_cast<std::size_t>(f + 1)) + " rows, got " +
                                      std::to_string(n));
  }
  if (!x.allFinite()) throw Error(ErrorKind::Numeric, "GMM input contains non-finite values");

  Rng rng(seed);
  GaussianMixture g;
  g.weights = Vector::Constant(k, 1.0 / static_cast<double>(k));
  const Vector mu = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - mu.transpose();
  Matrix base_cov = centered.transpose() * centered / static_cast<double>(n);
  base_cov.diagonal().array() += kGmmRidge;
  // Initial means: distinct random rows.
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (Eigen::Index c = 0; c < k; ++c) {
    g.means.push_back(k == 1 ? mu : Vector(x.row(perm[static_cast<std::size_t>(c)]).transpose()));
    g.covariances.push_back(base_cov);
  }

  Matrix logp(n, k);
  double prev = -std::numeric_limits<double>::infinity();
  bool converged = false;
  for (std::size_t it = 0; it < max_iter; ++it) {
    // E step
    for (Eigen::Index c = 0; c < k; ++c) {
      const auto comp = factor(g.covariances[static_cast<std::size_t>(c)]);
      logp.col(c) = log_gauss(x, g.means[static_cast<std::size_t>(c)], comp).array() + std::log(g.weights(c));
    }
    double ll = 0.0;
    Matrix resp(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = log_sum_exp(logp.row(i));
      ll += lse;
      resp.row(i) = (logp.row(i).array() - lse).exp();
    }
    if (!std::isfinite(ll)) throw Error(ErrorKind::Numeric, "GMM log-likelihood became non-finite");
    g.trace.push_back(ll);
    g.iterations = it + 1;
    g.log_likelihood = ll;
    if (it > 0 && std::abs(ll - prev) <= tol * std::max(1.0, std::abs(ll))) {
      converged = true;
      break;
    }
    prev = ll;
    // M step
    const Vector nk = resp.colwise().sum().transpose();
    for (Eigen::Index c = 0; c < k; ++c) {
      const double w = std::max(nk(c), 1e-12);
      g.weights(c) = w / static_cast<double>(n);
      g.means[static_cast<std::size_t>(c)] = (x.transpose() * resp.col(c)) / w;
      const Matrix d = x.rowwise() - g.means[static_cast<std::size_t>(c)].transpose();
      Matrix cov = d.transpose() * resp.col(c).asDiagonal() * d / w;
      cov.diagonal().array() += kGmmRidge;
      g.covariances[static_cast<std::size_t>(c)] = std::move(cov);
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "GMM EM did not converge in " << max_iter << " iterations; log-likelihood trace:";
    const auto start = g.trace.size() > 10 ? g.trace.size() - 10 : 0;
    if (start > 0) os << " ...";
    for (auto i = start; i < g.trace.size(); ++i) os << ' ' << g.trace[i];
    throw Error(ErrorKind::Convergence, os.str());
  }
  return g;
}

FeatureMatrix gmm_sample(const FeatureMatrix& fm, const AugmentPlan& plan) {
  return augment_each(fm, plan, [&](int cls, const std::vector<std::size_t>& rows, std::size_t need, Rng& rng,
                                    std::vector<RowVector>& out) {
    Matrix cx(static_cast<Eigen::Index>(rows.size()), fm.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) cx.row(static_cast<Eigen::Index>(i)) = fm.values.row(static_cast<Eigen::Index>(rows[i]));
    GaussianMixture g;
    try {
      g = fit_gmm(cx, plan.n_components, rng(), plan.gmm_max_iter, plan.gmm_tol);
    } catch (const Error& e) {
      throw Error(e.kind(), "class " + std::to_string(cls) + ": " + e.what());
    }
    const Matrix s = g.sample(need, rng);
    for (Eigen::Index i = 0; i < s.rows(); ++i) out.push_back(s.row(i));
  });
}

FeatureMatrix apply(const FeatureMatrix& fm, const AugmentPlan& plan) {
  switch (plan.method) {
    case Method::ROS: return ros(fm, plan);
    case Method::SMOTE: return smote(fm, plan);
    case Method::GMM: return gmm_sample(fm, plan);
    case Method::NOISE: return noise_jitter(fm, plan);
  }
  throw Error(ErrorKind::Spec, "unknown augmentation method");
}

}  // namespace spcagan::augment
