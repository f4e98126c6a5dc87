#pragma once

#include "spcagan/common.hpp"
#include "spcagan/loggen.hpp"

#include <compare>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spcagan::features {

struct UserDay {
  std::string user;
  std::int64_t day = 0;
  auto operator<=>(const UserDay&) const = default;
};

// N x F behaviour table; label 0 is normal, s > 0 is scenario s.
struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> feature_names;
  Labels labels;
  std::vector<UserDay> index;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  int n_classes() const;  // max label + 1
  std::vector<std::size_t> class_counts() const;
  FeatureMatrix select_rows(const std::vector<std::size_t>& rows) const;
  // Column subset, in the given order.
  FeatureMatrix select_columns(const std::vector<std::size_t>& cols) const;
  void validate() const;
};

// The 45 extracted features, grouped logon(10) email(12) http(8) file(5)
// device(5) psychometric(5).
const std::vector<std::string>& feature_names();

FeatureMatrix extract_features(const loggen::ActivityLog& log);

// Lexicon mean polarity of matched tokens in [-1, 1]; 0 for empty/no match.
double sentiment_score(std::string_view text);

struct SelectionReport {
  struct Dropped {
    std::string name;
    std::string correlated_with;
    double abs_r = 0;
  };
  std::vector<Dropped> dropped;
  std::size_t kept_count = 0;
  double threshold = 0;
};

double pearson(const Vector& x, const Vector& y);

std::pair<FeatureMatrix, SelectionReport> select_features(const FeatureMatrix& fm, double threshold);

// Column transform fitted on training data; zero-variance columns get std 1.
struct Standardizer {
  Vector mean;
  Vector std;

  Matrix apply(const Matrix& x) const;
  FeatureMatrix apply(const FeatureMatrix& fm) const;
  Matrix invert(const Matrix& z) const;
};

std::pair<FeatureMatrix, Standardizer> standardize(const FeatureMatrix& fm);

// CSV: header = feature names + "label". Sidecar JSON holds the user-day index
// and, when given, the standardization vectors.
void write_feature_csv(const FeatureMatrix& fm, const std::filesystem::path& csv_path,
                       const std::optional<Standardizer>& transform = std::nullopt,
                       const std::vector<std::string>& comment_lines = {});
struct LoadedFeatures {
  FeatureMatrix matrix;
  std::optional<Standardizer> transform;
};
LoadedFeatures read_feature_csv(const std::filesystem::path& csv_path);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

}  // namespace spcagan::features
