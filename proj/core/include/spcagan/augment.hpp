#pragma once

#include "spcagan/common.hpp"
#include "spcagan/features.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spcagan::augment {

enum class Method { ROS, SMOTE, GMM, NOISE };

std::string to_string(Method m);
std::optional<Method> parse_method(std::string_view s);

struct AugmentPlan {
  Method method = Method::ROS;
  std::map<int, std::size_t> per_class_target;  // class -> desired row count
  std::size_t k_neighbors = 5;
  std::size_t n_components = 1;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  std::size_t gmm_max_iter = 300;
  double gmm_tol = 1e-8;  // relative change of the mean log-likelihood

  void validate(const features::FeatureMatrix& fm) const;
};

// Targets every non-zero class at ratio x (count of class 0), never below its
// current count.
std::map<int, std::size_t> balance_targets(const features::FeatureMatrix& fm, double ratio = 1.0);

// Appended rows follow the original rows; the user-day index is dropped when
// rows are appended.
features::FeatureMatrix ros(const features::FeatureMatrix& fm, const AugmentPlan& plan);
features::FeatureMatrix smote(const features::FeatureMatrix& fm, const AugmentPlan& plan);
features::FeatureMatrix gmm_sample(const features::FeatureMatrix& fm, const AugmentPlan& plan);
features::FeatureMatrix noise_jitter(const features::FeatureMatrix& fm, const AugmentPlan& plan);
features::FeatureMatrix apply(const features::FeatureMatrix& fm, const AugmentPlan& plan);

// x + lambda * (neighbor - x)
RowVector smote_point(const RowVector& x, const RowVector& neighbor, double lambda);

// Indices of the k nearest rows to row i (Euclidean, ties by index), i excluded.
std::vector<std::size_t> nearest_neighbors(const Matrix& x, std::size_t i, std::size_t k);

struct GaussianMixture {
  Vector weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  double log_likelihood = 0;  // total over the fitted rows
  std::vector<double> trace;  // per-iteration total log-likelihood
  std::size_t iterations = 0;

  double log_density(const RowVector& x) const;
  Matrix sample(std::size_t n, Rng& rng) const;
};

inline constexpr double kGmmRidge = 1e-6;

GaussianMixture fit_gmm(const Matrix& x, std::size_t n_components, std::uint64_t seed,
                        std::size_t max_iter = 300, double tol = 1e-8);

}  // namespace spcagan::augment
