#include "spcagan/features.hpp"

#include "spcagan/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

namespace spcagan::features {

using loggen::ActivityLog;

int FeatureMatrix::n_classes() const {
  int m = 0;
  for (int l : labels) m = std::max(m, l);
  return labels.empty() ? 0 : m + 1;
}

std::vector<std::size_t> FeatureMatrix::class_counts() const {
  std::vector<std::size_t> c(static_cast<std::size_t>(n_classes()), 0);
  for (int l : labels) ++c[static_cast<std::size_t>(l)];
  return c;
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<std::size_t>& rows) const {
  FeatureMatrix out;
  out.feature_names = feature_names;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
    if (!index.empty()) out.index.push_back(index[rows[i]]);
  }
  return out;
}

FeatureMatrix FeatureMatrix::select_columns(const std::vector<std::size_t>& cols) const {
  FeatureMatrix out;
  out.labels = labels;
  out.index = index;
  out.values.resize(values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(static_cast<Eigen::Index>(cols[j]));
    out.feature_names.push_back(feature_names[cols[j]]);
  }
  return out;
}

void FeatureMatrix::validate() const {
  if (static_cast<std::size_t>(values.rows()) != labels.size()) {
    throw Error(ErrorKind::Format, "feature matrix rows and labels differ in length");
  }
  if (!index.empty() && index.size() != labels.size()) {
    throw Error(ErrorKind::Format, "feature matrix rows and user-day index differ in length");
  }
  if (static_cast<std::size_t>(values.cols()) != feature_names.size()) {
    throw Error(ErrorKind::Format, "feature matrix columns and names differ in length");
  }
  for (int l : labels) {
    if (l < 0) throw Error(ErrorKind::Format, "negative label");
  }
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names{
      // logon
      "logon_count", "logoff_count", "after_hours_logon_count", "after_hours_logoff_count", "distinct_pcs",
      "first_logon_hour", "last_logoff_hour", "session_hours_mean", "session_hours_max", "weekend_flag",
      // email
      "email_count", "after_hours_email_count", "recipient_count", "external_recipient_count", "cc_count",
      "distinct_recipients", "attachment_count", "emails_with_attachments", "email_size_mean", "email_size_max",
      "email_size_std", "email_sentiment_mean",
      // http
      "http_count", "after_hours_http_count", "distinct_domains", "job_site_count", "leak_site_count",
      "url_length_mean", "http_words_mean", "http_sentiment_mean",
      // file
      "file_count", "after_hours_file_count", "distinct_files", "document_file_count", "exe_archive_file_count",
      // device
      "connect_count", "disconnect_count", "after_hours_connect_count", "distinct_device_pcs", "connected_hours",
      // psychometric
      "psych_openness", "psych_conscientiousness", "psych_extraversion", "psych_agreeableness",
      "psych_neuroticism"};
  return names;
}

// ---------------------------------------------------------------------------

namespace {

const std::unordered_map<std::string, double>& lexicon() {
  static const std::unordered_map<std::string, double> lex = [] {
    std::unordered_map<std::string, double> m;
    for (const char* w : {"great", "thanks", "thank", "excellent", "happy", "good", "appreciate", "congratulations",
                          "success", "glad", "wonderful", "pleased", "helpful", "love", "nice", "awesome",
                          "fantastic", "enjoy", "welcome", "best"}) {
      m[w] = 1.0;
    }
    for (const char* w : {"angry", "unfair", "terrible", "hate", "furious", "awful", "disappointed", "quit",
                          "revenge", "useless", "stupid", "worst", "bad", "horrible", "annoyed", "sad",
                          "fired", "threat", "idiot", "disgusting"}) {
      m[w] = -1.0;
    }
    return m;
  }();
  return lex;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

struct Stats {
  double sum = 0, sumsq = 0, max = 0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    sumsq += v * v;
    max = n == 0 ? v : std::max(max, v);
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double std() const {
    if (n == 0) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sumsq / static_cast<double>(n) - m * m));
  }
};

struct DayBucket {
  std::vector<const loggen::LogonRow*> logon;
  std::vector<const loggen::EmailRow*> email;
  std::vector<const loggen::HttpRow*> http;
  std::vector<const loggen::DeviceRow*> device;
  std::vector<const loggen::FileRow*> file;
};

template <typename Row>
void sort_ptrs(std::vector<const Row*>& v) {
  std::sort(v.begin(), v.end(), [](const Row* a, const Row* b) { return *a < *b; });
}

void fill_logon(const DayBucket& b, std::int64_t day, double* f) {
  Stats dur;
  std::set<std::string> pcs;
  std::map<std::string, Timestamp> open;
  double first = -1, last = -1;
  for (const auto* r : b.logon) {
    pcs.insert(r->pc);
    if (r->activity == loggen::LogonActivity::Logon) {
      f[0] += 1;
      if (is_after_hours(r->time)) f[2] += 1;
      if (first < 0) first = hour_of(r->time);
      open[r->pc] = r->time;
    } else {
      f[1] += 1;
      if (is_after_hours(r->time)) f[3] += 1;
      last = hour_of(r->time);
      const auto it = open.find(r->pc);
      if (it != open.end()) {
        dur.add(static_cast<double>(r->time - it->second) / 3600.0);
        open.erase(it);
      }
    }
  }
  f[4] = static_cast<double>(pcs.size());
  f[5] = std::max(first, 0.0);
  f[6] = std::max(last, 0.0);
  f[7] = dur.mean();
  f[8] = dur.n ? dur.max : 0.0;
  f[9] = is_weekend(day) ? 1.0 : 0.0;
}

void fill_email(const DayBucket& b, double* f) {
  Stats size, sent;
  std::set<std::string> distinct;
  for (const auto* r : b.email) {
    f[0] += 1;
    if (is_after_hours(r->time)) f[1] += 1;
    f[2] += static_cast<double>(r->to.size() + r->cc.size());
    for (const auto* list : {&r->to, &r->cc}) {
      for (const auto& a : *list) {
        distinct.insert(a);
        if (loggen::mail_domain(a) != loggen::kCompanyDomain) f[3] += 1;
      }
    }
    f[4] += static_cast<double>(r->cc.size());
    f[6] += r->attachments;
    if (r->attachments > 0) f[7] += 1;
    size.add(static_cast<double>(r->size));
    sent.add(sentiment_score(r->content));
  }
  f[5] = static_cast<double>(distinct.size());
  f[8] = size.mean();
  f[9] = size.n ? size.max : 0.0;
  f[10] = size.std();
  f[11] = sent.mean();
}

void fill_http(const DayBucket& b, double* f) {
  Stats len, words, sent;
  std::set<std::string> domains;
  const auto& jobs = loggen::job_domains();
  const auto& leaks = loggen::leak_domains();
  for (const auto* r : b.http) {
    f[0] += 1;
    if (is_after_hours(r->time)) f[1] += 1;
    const auto dom = loggen::url_domain(r->url);
    domains.insert(dom);
    if (std::find(jobs.begin(), jobs.end(), dom) != jobs.end()) f[3] += 1;
    if (std::find(leaks.begin(), leaks.end(), dom) != leaks.end()) f[4] += 1;
    len.add(static_cast<double>(r->url.size()));
    words.add(static_cast<double>(std::count(r->content.begin(), r->content.end(), ' ') + (r->content.empty() ? 0 : 1)));
    sent.add(sentiment_score(r->content));
  }
  f[2] = static_cast<double>(domains.size());
  f[5] = len.mean();
  f[6] = words.mean();
  f[7] = sent.mean();
}

void fill_file(const DayBucket& b, double* f) {
  std::set<std::string> names;
  for (const auto* r : b.file) {
    f[0] += 1;
    if (is_after_hours(r->time)) f[1] += 1;
    names.insert(r->filename);
    if (loggen::is_document_file(r->filename)) f[3] += 1;
    if (ends_with(r->filename, ".exe") || ends_with(r->filename, ".zip")) f[4] += 1;
  }
  f[2] = static_cast<double>(names.size());
}

void fill_device(const DayBucket& b, double* f) {
  std::set<std::string> pcs;
  std::map<std::string, Timestamp> open;
  for (const auto* r : b.device) {
    pcs.insert(r->pc);
    if (r->activity == loggen::DeviceActivity::Connect) {
      f[0] += 1;
      if (is_after_hours(r->time)) f[2] += 1;
      open[r->pc] = r->time;
    } else {
      f[1] += 1;
      const auto it = open.find(r->pc);
      if (it != open.end()) {
        f[4] += static_cast<double>(r->time - it->second) / 3600.0;
        open.erase(it);
      }
    }
  }
  f[3] = static_cast<double>(pcs.size());
}

}  // namespace

double sentiment_score(std::string_view text) {
  const auto& lex = lexicon();
  double sum = 0.0;
  std::size_t matched = 0;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    const auto it = lex.find(tok);
    if (it != lex.end()) {
      sum += it->second;
      ++matched;
    }
    tok.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) tok.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return matched ? sum / static_cast<double>(matched) : 0.0;
}

FeatureMatrix extract_features(const ActivityLog& log) {
  if (log.empty_events()) throw Error(ErrorKind::Input, "activity log has no events");

  std::map<UserDay, DayBucket> buckets;
  for (const auto& r : log.logon) buckets[{r.user, day_of(r.time)}].logon.push_back(&r);
  for (const auto& r : log.email) buckets[{r.user, day_of(r.time)}].email.push_back(&r);
  for (const auto& r : log.http) buckets[{r.user, day_of(r.time)}].http.push_back(&r);
  for (const auto& r : log.device) buckets[{r.user, day_of(r.time)}].device.push_back(&r);
  for (const auto& r : log.file) buckets[{r.user, day_of(r.time)}].file.push_back(&r);

  std::map<std::string, const loggen::PsychometricRow*> psych;
  for (const auto& p : log.psychometric) psych[p.user] = &p;

  std::map<UserDay, int> label_of;
  for (const auto& hit : loggen::detect_scenarios(log)) label_of[{hit.user, hit.day}] = hit.scenario;

  const auto& names = feature_names();
  FeatureMatrix fm;
  fm.feature_names = names;
  fm.values = Matrix::Zero(static_cast<Eigen::Index>(buckets.size()), static_cast<Eigen::Index>(names.size()));

  std::vector<double> row(names.size());
  Eigen::Index i = 0;
  for (auto& [key, b] : buckets) {
    // Row order within a bucket must not depend on input order.
    sort_ptrs(b.logon);
    sort_ptrs(b.email);
    sort_ptrs(b.http);
    sort_ptrs(b.device);
    sort_ptrs(b.file);
    std::fill(row.begin(), row.end(), 0.0);
    fill_logon(b, key.day, row.data());
    fill_email(b, row.data() + 10);
    fill_http(b, row.data() + 22);
    fill_file(b, row.data() + 30);
    fill_device(b, row.data() + 35);
    if (const auto it = psych.find(key.user); it != psych.end()) {
      const auto& p = *it->second;
      row[40] = p.openness;
      row[41] = p.conscientiousness;
      row[42] = p.extraversion;
      row[43] = p.agreeableness;
      row[44] = p.neuroticism;
    }
    for (std::size_t j = 0; j < row.size(); ++j) fm.values(i, static_cast<Eigen::Index>(j)) = row[j];
    fm.index.push_back(key);
    const auto lit = label_of.find(key);
    fm.labels.push_back(lit == label_of.end() ? 0 : lit->second);
    ++i;
  }
  if (!fm.values.allFinite()) throw Error(ErrorKind::Numeric, "non-finite value produced by feature extraction");
  return fm;
}

// ---------------------------------------------------------------------------

double pearson(const Vector& x, const Vector& y) {
  const double n = static_cast<double>(x.size());
  const double mx = x.mean(), my = y.mean();
  const Vector dx = x.array() - mx, dy = y.array() - my;
  const double sxx = dx.squaredNorm(), syy = dy.squaredNorm();
  // Zero (or round-off level) variance counts as uncorrelated.
  if (sxx <= 1e-24 * n || syy <= 1e-24 * n) return 0.0;
  return dx.dot(dy) / std::sqrt(sxx * syy);
}

std::pair<FeatureMatrix, SelectionReport> select_features(const FeatureMatrix& fm, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorKind::Range, "threshold must lie in (0, 1)");
  if (!fm.values.allFinite()) throw Error(ErrorKind::Numeric, "feature matrix contains non-finite values");

  const auto F = fm.values.cols();
  auto is_constant = [&](Eigen::Index j) {
    const auto col = fm.values.col(j);
    return col.size() == 0 || (col.array() == col(0)).all();
  };

  SelectionReport report;
  report.threshold = threshold;
  std::vector<std::size_t> kept;
  for (Eigen::Index j = 0; j < F; ++j) {
    const Vector col = fm.values.col(j);
    bool drop = false;
    for (std::size_t k : kept) {
      const auto kk = static_cast<Eigen::Index>(k);
      double r = 0.0;
      if (is_constant(j)) {
        // Only an identical constant column duplicates a constant column.
        if (is_constant(kk) && (col.size() == 0 || fm.values(0, kk) == col(0))) r = 1.0;
      } else {
        r = std::abs(pearson(col, fm.values.col(kk)));
      }
      if (r >= threshold) {
        report.dropped.push_back({fm.feature_names[static_cast<std::size_t>(j)], fm.feature_names[k], r});
        drop = true;
        break;
      }
    }
    if (!drop) kept.push_back(static_cast<std::size_t>(j));
  }
  report.kept_count = kept.size();
  return {fm.select_columns(kept), report};
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw Error(ErrorKind::Range, "column count does not match the fitted transform");
  return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& fm) const {
  FeatureMatrix out = fm;
  out.values = apply(fm.values);
  return out;
}

Matrix Standardizer::invert(const Matrix& z) const {
  return (z.array().rowwise() * std.transpose().array()).rowwise() + mean.transpose().array();
}

std::pair<FeatureMatrix, Standardizer> standardize(const FeatureMatrix& fm) {
  if (fm.values.rows() == 0 || fm.values.cols() == 0) throw Error(ErrorKind::Input, "cannot standardize an empty matrix");
  Standardizer t;
  t.mean = fm.values.colwise().mean().transpose();
  const Matrix centered = fm.values.rowwise() - t.mean.transpose();
  t.std = (centered.array().square().colwise().sum() / static_cast<double>(fm.values.rows())).sqrt().transpose();
  for (Eigen::Index j = 0; j < t.std.size(); ++j) {
    if (!(t.std(j) > 1e-12 * std::max(1.0, std::abs(t.mean(j))))) t.std(j) = 1.0;
  }
  FeatureMatrix out = t.apply(fm);
  // Columns whose spread is at round-off level map exactly to zero.
  for (Eigen::Index j = 0; j < t.std.size(); ++j) {
    if (t.std(j) == 1.0 && (centered.col(j).array().abs() <= 1e-12 * std::max(1.0, std::abs(t.mean(j)))).all()) {
      out.values.col(j).setZero();
    }
  }
  return {std::move(out), std::move(t)};
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".meta.json");
  return p;
}

void write_feature_csv(const FeatureMatrix& fm, const std::filesystem::path& csv_path,
                       const std::optional<Standardizer>& transform, const std::vector<std::string>& comment_lines) {
  fm.validate();
  std::string out;
  for (const auto& c : comment_lines) out += "# " + c + "\n";
  auto header = fm.feature_names;
  header.push_back("label");
  out += csv::join(header) + "\n";
  for (Eigen::Index i = 0; i < fm.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < fm.values.cols(); ++j) {
      out += fmt(fm.values(i, j));
      out.push_back(',');
    }
    out += std::to_string(fm.labels[static_cast<std::size_t>(i)]) + "\n";
  }
  csv::write_atomic(csv_path, out);

  nlohmann::ordered_json meta;
  auto& idx = meta["user_day_index"] = nlohmann::json::array();
  for (const auto& ud : fm.index) idx.push_back({ud.user, format_date(ud.day)});
  if (transform) {
    meta["mean_vec"] = std::vector<double>(transform->mean.data(), transform->mean.data() + transform->mean.size());
    meta["std_vec"] = std::vector<double>(transform->std.data(), transform->std.data() + transform->std.size());
  }
  if (!comment_lines.empty()) meta["provenance"] = comment_lines;
  csv::write_atomic(sidecar_path(csv_path), meta.dump(1) + "\n");
}

LoadedFeatures read_feature_csv(const std::filesystem::path& csv_path) {
  const auto t = csv::read(csv_path);
  if (t.header.empty() || t.header.back() != "label") {
    throw Error(ErrorKind::Format, csv_path.string() + ": last header column must be 'label'");
  }
  if (t.malformed) throw Error(ErrorKind::Format, csv_path.string() + ": malformed rows");
  LoadedFeatures res;
  auto& fm = res.matrix;
  fm.feature_names.assign(t.header.begin(), t.header.end() - 1);
  const auto F = static_cast<Eigen::Index>(fm.feature_names.size());
  fm.values.resize(static_cast<Eigen::Index>(t.rows.size()), F);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    for (Eigen::Index j = 0; j < F; ++j) {
      const auto& s = row[static_cast<std::size_t>(j)];
      double v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) {
        throw Error(ErrorKind::Format, csv_path.string() + ": bad number '" + s + "'");
      }
      fm.values(static_cast<Eigen::Index>(i), j) = v;
    }
    int label = 0;
    const auto& ls = row.back();
    auto [p, ec] = std::from_chars(ls.data(), ls.data() + ls.size(), label);
    if (ec != std::errc{} || p != ls.data() + ls.size() || label < 0) {
      throw Error(ErrorKind::Format, csv_path.string() + ": bad label '" + ls + "'");
    }
    fm.labels.push_back(label);
  }
  const auto side = sidecar_path(csv_path);
  if (std::filesystem::is_regular_file(side)) {
    const auto meta = nlohmann::json::parse(csv::read_file(side));
    if (meta.contains("user_day_index")) {
      for (const auto& e : meta["user_day_index"]) {
        const auto day = parse_date(e.at(1).get<std::string>());
        if (!day) throw Error(ErrorKind::Format, side.string() + ": bad date in user_day_index");
        fm.index.push_back({e.at(0).get<std::string>(), *day});
      }
    }
    if (meta.contains("mean_vec") && meta.contains("std_vec")) {
      const auto m = meta["mean_vec"].get<std::vector<double>>();
      const auto s = meta["std_vec"].get<std::vector<double>>();
      Standardizer tr;
      tr.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
      tr.std = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
      res.transform = tr;
    }
  }
  fm.validate();
  return res;
}

}  // namespace spcagan::features
