#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spcagan {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Labels = std::vector<int>;
using Rng = std::mt19937_64;

enum class ErrorKind {
  Spec,         // invalid configuration or specification
  Input,        // missing or empty input
  Format,       // unparseable file content
  Range,        // argument outside its domain
  Numeric,      // non-finite values, failed decompositions
  Convergence,  // iterative method did not converge
  Io,           // filesystem failures
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  // Outermost pipeline stage, empty when untagged.
  const std::string& stage() const noexcept { return stage_; }
  // Same error with "[stage] " prepended; an already tagged error is returned unchanged.
  Error tagged(const std::string& stage) const;

 private:
  Error(ErrorKind kind, const std::string& what, std::string stage);

  ErrorKind kind_;
  std::string stage_;
};

// Seconds since 1970-01-01 00:00:00, timezone-free ("local" CERT time).
using Timestamp = std::int64_t;

// Parses "MM/DD/YYYY HH:MM:SS"; nullopt on any malformation.
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

// Parses "MM/DD/YYYY" to a day number (days since epoch).
std::optional<std::int64_t> parse_date(std::string_view text);
std::string format_date(std::int64_t day);

inline std::int64_t day_of(Timestamp ts) {
  return ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
}
inline double hour_of(Timestamp ts) {
  return static_cast<double>(ts - day_of(ts) * 86400) / 3600.0;
}
bool is_weekend(std::int64_t day);

// Working hours are [08:00, 18:00).
inline bool is_after_hours(Timestamp ts) {
  const double h = hour_of(ts);
  return h < 8.0 || h >= 18.0;
}

// Child seed for an independent stream; splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

bool all_finite(const Matrix& m);

Matrix one_hot(const Labels& labels, int n_classes);

}  // namespace spcagan
