#include "spcagan/common.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstring>

namespace spcagan {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Spec: return "specification error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Range: return "range error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Convergence: return "convergence error";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

Error::Error(ErrorKind kind, const std::string& what, std::string stage)
    : std::runtime_error(what), kind_(kind), stage_(std::move(stage)) {}

Error Error::tagged(const std::string& stage) const {
  if (!stage_.empty()) return *this;
  return Error(kind_, "[" + stage + "] " + what(), stage);
}

namespace {

bool parse_fixed(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
  return ec == std::errc{} && p == s.data() + pos + len;
}

std::optional<std::int64_t> civil_day(int year, int month, int day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd}.time_since_epoch().count();
}

}  // namespace

std::optional<std::int64_t> parse_date(std::string_view text) {
  if (text.size() != 10 || text[2] != '/' || text[5] != '/') return std::nullopt;
  int mm = 0, dd = 0, yyyy = 0;
  if (!parse_fixed(text, 0, 2, mm) || !parse_fixed(text, 3, 2, dd) || !parse_fixed(text, 6, 4, yyyy)) {
    return std::nullopt;
  }
  return civil_day(yyyy, mm, dd);
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  if (text.size() != 19 || text[10] != ' ' || text[13] != ':' || text[16] != ':') return std::nullopt;
  const auto day = parse_date(text.substr(0, 10));
  if (!day) return std::nullopt;
  int hh = 0, mi = 0, ss = 0;
  if (!parse_fixed(text, 11, 2, hh) || !parse_fixed(text, 14, 2, mi) || !parse_fixed(text, 17, 2, ss)) {
    return std::nullopt;
  }
  if (hh > 23 || mi > 59 || ss > 59) return std::nullopt;
  return *day * 86400 + hh * 3600 + mi * 60 + ss;
}

std::string format_date(std::int64_t day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02u/%02u/%04d", static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(ymd.year()));
  return buf;
}

std::string format_timestamp(Timestamp ts) {
  const std::int64_t day = day_of(ts);
  const std::int64_t secs = ts - day * 86400;
  char buf[16];
  std::snprintf(buf, sizeof buf, " %02d:%02d:%02d", static_cast<int>(secs / 3600),
                static_cast<int>((secs / 60) % 60), static_cast<int>(secs % 60));
  return format_date(day) + buf;
}

bool is_weekend(std::int64_t day) {
  using namespace std::chrono;
  const unsigned wd = weekday{sys_days{days{day}}}.c_encoding();
  return wd == 0 || wd == 6;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h) {
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(dims), sizeof dims), h);
  return fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()),
                                sizeof(double) * static_cast<std::size_t>(m.size())),
               h);
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Matrix one_hot(const Labels& labels, int n_classes) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) {
      throw Error(ErrorKind::Range, "label " + std::to_string(labels[i]) + " outside [0, " +
                                        std::to_string(n_classes) + ")");
    }
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return out;
}

}  // namespace spcagan
