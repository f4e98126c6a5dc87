#pragma once

#include "spcagan/common.hpp"

#include <vector>

namespace spcagan::linmetrics {

struct PcaBasis {
  Matrix loadings;            // F x k, orthonormal columns
  Vector explained_variance;  // k, descending
  Vector center;              // F
};

// Top-k right singular vectors of the centered data. Each component is signed
// so that its largest-magnitude entry is positive.
PcaBasis pca_fit(const Matrix& x, std::size_t k);

// Every explained variance of the centered data (min(N-1, F) values).
Vector explained_variances(const Matrix& x);

// Kneedle-style elbow: index of the point farthest from the first-to-last
// chord, returned as a component count (minimum 1).
std::size_t elbow_k(const std::vector<double>& explained_variance);

// Sum of cos^2 between the first k components of A and of B; in [0, k].
double spca(const Matrix& a, const Matrix& b, std::size_t k);
double spca_from_loadings(const Matrix& l, const Matrix& m);

double silhouette(const Matrix& x, const Labels& labels);

// Mean of 1/(1+RMSE) over column means, column stds and the upper triangle of
// the Pearson correlation matrix, after z-scoring both with real statistics.
double similarity_score(const Matrix& real, const Matrix& synth);

Vector kde_curve(const Vector& x, const Vector& grid, double bandwidth);
// Silverman's rule of thumb; falls back to 1 for degenerate samples.
double silverman_bandwidth(const Vector& x);

struct FidelityScores {
  double spca = 0;
  double similarity_score = 0;
  double silhouette_real = 0;
  double silhouette_synth = 0;
  std::size_t k_used = 0;
};

// k is chosen by elbow_k on the real data (capped so both sides admit it).
// Silhouettes use class labels within each side; sides with fewer than two
// classes score 0.
FidelityScores fidelity(const Matrix& real, const Labels& real_labels, const Matrix& synth,
                        const Labels& synth_labels);

}  // namespace spcagan::linmetrics
