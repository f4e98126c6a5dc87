#include "spcagan/experiment.hpp"

#include "spcagan/checkpoint.hpp"
#include "spcagan/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <numeric>
#include <set>

#ifndef SPCAGAN_VERSION
#define SPCAGAN_VERSION "0.0.0"
#endif

namespace spcagan::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Seed streams derived from the master seed.
constexpr std::uint64_t kSplitStream = 10;
constexpr std::uint64_t kAugmentStream = 20;
constexpr std::uint64_t kDetectorStream = 30;
constexpr std::uint64_t kAttackStream = 40;

const std::set<std::string>& augmenter_names() {
  static const std::set<std::string> names{"NONE", "ROS", "SMOTE", "GMM", "NOISE", "CGAN", "ACGAN", "CWGANGP", "SPCAGAN"};
  return names;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string num_full(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string comment_block(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += "# " + l + "\n";
  return out;
}

template <typename F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw stage_error(stage, e);
  }
}

// Overlays a partial JSON object on the defaults of a config type.
template <typename Config>
Config overlay(const Config& defaults, const json& patch) {
  auto j = json::parse(defaults.to_json());
  j.merge_patch(patch);
  return Config::from_json(j.dump());
}

json corpus_to_json(const loggen::CorpusSpec& c) {
  return {{"n_users", c.n_users},
          {"n_days", c.n_days},
          {"n_insiders", c.n_insiders},
          {"scenarios", c.scenarios},
          {"seed", c.seed},
          {"burst_min_days", c.burst_min_days},
          {"burst_max_days", c.burst_max_days},
          {"start_day", c.start_day}};
}

loggen::CorpusSpec corpus_from_json(const json& j) {
  loggen::CorpusSpec c;
  c.n_users = j.value("n_users", c.n_users);
  c.n_days = j.value("n_days", c.n_days);
  c.n_insiders = j.value("n_insiders", c.n_insiders);
  c.scenarios = j.value("scenarios", c.scenarios);
  c.seed = j.value("seed", c.seed);
  c.burst_min_days = j.value("burst_min_days", c.burst_min_days);
  c.burst_max_days = j.value("burst_max_days", c.burst_max_days);
  c.start_day = j.value("start_day", c.start_day);
  return c;
}

json augmenter_to_json(const AugmenterSpec& a) {
  return {{"method", a.name},       {"ratio", a.ratio}, {"k_neighbors", a.k_neighbors},
          {"n_components", a.n_components}, {"sigma", a.sigma}, {"gan", json::parse(a.gan.to_json())}};
}

AugmenterSpec augmenter_from_json(const json& j) {
  AugmenterSpec a;
  if (j.is_string()) {
    a.name = j.get<std::string>();
  } else {
    a.name = j.value("method", a.name);
    a.ratio = j.value("ratio", a.ratio);
    a.k_neighbors = j.value("k_neighbors", a.k_neighbors);
    a.n_components = j.value("n_components", a.n_components);
    a.sigma = j.value("sigma", a.sigma);
    if (j.contains("gan")) a.gan = overlay(a.gan, j.at("gan"));
  }
  std::transform(a.name.begin(), a.name.end(), a.name.begin(), [](unsigned char c) { return std::toupper(c); });
  if (a.is_gan()) a.gan.mode = *gan::parse_mode(a.name);
  return a;
}

json attack_to_json(const adversarial::AttackConfig& a) {
  return {{"kind", adversarial::to_string(a.kind)},
          {"epsilon", a.epsilon},
          {"max_iter", a.max_iter},
          {"overshoot", a.overshoot},
          {"surrogate_hidden", a.surrogate_hidden},
          {"surrogate_epochs", a.surrogate_epochs}};
}

adversarial::AttackConfig attack_from_json(const json& j) {
  adversarial::AttackConfig a;
  const auto kind = adversarial::parse_attack(j.is_string() ? j.get<std::string>() : j.value("kind", "FGSM"));
  if (!kind) throw Error(ErrorKind::Spec, "unknown attack kind in " + j.dump());
  a.kind = *kind;
  if (j.is_object()) {
    a.epsilon = j.value("epsilon", a.epsilon);
    a.max_iter = j.value("max_iter", a.max_iter);
    a.overshoot = j.value("overshoot", a.overshoot);
    a.surrogate_hidden = j.value("surrogate_hidden", a.surrogate_hidden);
    a.surrogate_epochs = j.value("surrogate_epochs", a.surrogate_epochs);
  }
  return a;
}

json detector_to_json(const detect::DetectorConfig& d) {
  auto j = json::parse(d.to_json());
  // Filled in from the data and the master seed at run time.
  j.erase("n_classes");
  j.erase("feature_dim");
  j.erase("seed");
  return j;
}

std::vector<std::string> read_comment_lines(const fs::path& path) {
  const auto text = csv::read_file(path);
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    if (line.rfind("# ", 0) == 0) out.push_back(line.substr(2));
    pos = end + 1;
  }
  return out;
}

std::optional<std::string> lookup(const std::vector<std::string>& lines, const std::string& key) {
  for (const auto& l : lines) {
    if (l.rfind(key + "=", 0) == 0) return l.substr(key.size() + 1);
  }
  return std::nullopt;
}

std::vector<std::string> json_provenance(const json& j) {
  if (!j.is_object() || !j.contains("provenance")) return {};
  return j.at("provenance").get<std::vector<std::string>>();
}

void write_text(const fs::path& path, const std::string& content, std::vector<fs::path>* files) {
  csv::write_atomic(path, content);
  if (files) files->push_back(path);
}

std::string file_safe(const std::string& s) {
  std::string out = s;
  for (auto& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  }
  return out;
}

}  // namespace

std::string version_string() { return std::string("spcagan ") + SPCAGAN_VERSION; }

Error stage_error(const std::string& stage, const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return err->tagged(stage);
  return Error(ErrorKind::Io, e.what()).tagged(stage);
}

// Config -------------------------------------------------------------------

bool AugmenterSpec::is_gan() const { return gan::parse_mode(name).has_value(); }

std::string AugmenterSpec::dataset_label() const { return is_none() ? "REAL" : name; }

void ExperimentConfig::validate() const {
  if (corpus.has_value() == cert_dir.has_value()) {
    throw Error(ErrorKind::Spec, "exactly one of corpus and cert_dir must be given");
  }
  if (corpus) corpus->validate();
  if (!(split.train_frac > 0.0 && split.train_frac < 1.0)) throw Error(ErrorKind::Spec, "train_frac must be in (0, 1)");
  if (!(correlation_threshold > 0.0 && correlation_threshold < 1.0)) {
    throw Error(ErrorKind::Spec, "correlation_threshold must be in (0, 1)");
  }
  if (augmenters.empty()) throw Error(ErrorKind::Spec, "no augmenter configured");
  if (detectors.empty()) throw Error(ErrorKind::Spec, "no detector configured");
  std::set<std::string> seen;
  for (const auto& a : augmenters) {
    if (!augmenter_names().count(a.name)) throw Error(ErrorKind::Spec, "unknown augmenter '" + a.name + "'");
    if (!seen.insert(a.name).second) throw Error(ErrorKind::Spec, "augmenter '" + a.name + "' listed twice");
    if (!(a.ratio > 0.0)) throw Error(ErrorKind::Spec, "augmenter ratio must be positive");
  }
  for (const auto& d : detectors) {
    if (d.epochs == 0 || d.batch_size == 0 || !(d.lr > 0.0)) {
      throw Error(ErrorKind::Spec, "detector epochs, batch_size and lr must be positive");
    }
  }
  for (const auto& a : attacks) a.validate();
  if (output_dir.empty()) throw Error(ErrorKind::Spec, "output_dir is empty");
  if (kde_points < 2) throw Error(ErrorKind::Spec, "kde_points must be >= 2");
}

std::string ExperimentConfig::to_json() const {
  json j;
  if (corpus) j["corpus"] = corpus_to_json(*corpus);
  if (cert_dir) j["cert_dir"] = cert_dir->string();
  j["features"] = {{"correlation_threshold", correlation_threshold}};
  j["split"] = {{"train_frac", split.train_frac}, {"stratified", split.stratified}};
  j["augmenters"] = json::array();
  for (const auto& a : augmenters) j["augmenters"].push_back(augmenter_to_json(a));
  j["detectors"] = json::array();
  for (const auto& d : detectors) j["detectors"].push_back(detector_to_json(d));
  j["attacks"] = json::array();
  for (const auto& a : attacks) j["attacks"].push_back(attack_to_json(a));
  j["output_dir"] = output_dir.string();
  j["seed"] = seed;
  j["plots"] = {{"enabled", emit_plots}, {"kde_features", kde_features}, {"kde_points", kde_points}};
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw Error(ErrorKind::Format, "experiment config must be a JSON object");
    if (j.contains("corpus")) c.corpus = corpus_from_json(j.at("corpus"));
    if (j.contains("cert_dir")) c.cert_dir = fs::path(j.at("cert_dir").get<std::string>());
    if (j.contains("features")) {
      c.correlation_threshold = j.at("features").value("correlation_threshold", c.correlation_threshold);
    }
    if (j.contains("split")) {
      c.split.train_frac = j.at("split").value("train_frac", c.split.train_frac);
      c.split.stratified = j.at("split").value("stratified", c.split.stratified);
    }
    if (j.contains("augmenter") && j.contains("augmenters")) {
      throw Error(ErrorKind::Spec, "give either augmenter or augmenters, not both");
    }
    if (j.contains("augmenter")) c.augmenters = {augmenter_from_json(j.at("augmenter"))};
    if (j.contains("augmenters")) {
      c.augmenters.clear();
      for (const auto& a : j.at("augmenters")) c.augmenters.push_back(augmenter_from_json(a));
    }
    if (j.contains("detector") && j.contains("detectors")) {
      throw Error(ErrorKind::Spec, "give either detector or detectors, not both");
    }
    auto det = [](const json& d) {
      return overlay(detect::DetectorConfig{}, d.is_string() ? json{{"kind", d.get<std::string>()}} : d);
    };
    if (j.contains("detector")) c.detectors = {det(j.at("detector"))};
    if (j.contains("detectors")) {
      c.detectors.clear();
      for (const auto& d : j.at("detectors")) c.detectors.push_back(det(d));
    }
    if (j.contains("attacks")) {
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_from_json(a));
    }
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.seed = j.value("seed", c.seed);
    if (j.contains("plots")) {
      const auto& p = j.at("plots");
      c.emit_plots = p.value("enabled", c.emit_plots);
      c.kde_features = p.value("kde_features", c.kde_features);
      c.kde_points = p.value("kde_points", c.kde_points);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  auto c = from_json(csv::read_file(path));
  if (c.cert_dir && c.cert_dir->is_relative()) c.cert_dir = path.parent_path() / *c.cert_dir;
  c.apply_env_overrides();
  return c;
}

void ExperimentConfig::apply_env_overrides() {
  if (const char* s = std::getenv("SPCAGAN_SEED"); s && *s) {
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw Error(ErrorKind::Spec, std::string("SPCAGAN_SEED is not an integer: ") + s);
    seed = v;
  }
  if (const char* o = std::getenv("SPCAGAN_OUTPUT_DIR"); o && *o) output_dir = o;
}

std::string ExperimentConfig::hash() const {
  auto j = json::parse(to_json());
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

// Split --------------------------------------------------------------------

Split stratified_split(const Labels& labels, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) throw Error(ErrorKind::Range, "split fraction must be in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [c, rows] : by_class) {
    if (rows.size() < 2) {
      throw Error(ErrorKind::Range, "class " + std::to_string(c) + " has a single row; stratified split needs two");
    }
  }

  // Largest remainder: floor every quota, then hand out the missing rows to
  // the largest fractional parts (ties to the lower class id).
  const auto total = static_cast<std::size_t>(std::llround(frac * static_cast<double>(labels.size())));
  std::vector<int> classes;
  std::vector<std::size_t> take;
  std::vector<double> remainder;
  std::size_t assigned = 0;
  for (const auto& [c, rows] : by_class) {
    const double q = frac * static_cast<double>(rows.size());
    classes.push_back(c);
    take.push_back(static_cast<std::size_t>(std::floor(q)));
    remainder.push_back(q - std::floor(q));
    assigned += take.back();
  }
  std::vector<std::size_t> order(classes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total && i < order.size(); ++i, ++assigned) ++take[order[i]];
  // Both sides keep at least one row of every class.
  for (std::size_t i = 0; i < classes.size(); ++i) {
    take[i] = std::clamp<std::size_t>(take[i], 1, by_class[classes[i]].size() - 1);
  }

  Split s;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    auto rows = by_class[classes[i]];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(classes[i])));
    std::shuffle(rows.begin(), rows.end(), rng);
    s.train.insert(s.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take[i]));
    s.test.insert(s.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(take[i]), rows.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Split random_split(std::size_t n, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) throw Error(ErrorKind::Range, "split fraction must be in (0, 1)");
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto t = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  Split s;
  s.train.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(t));
  s.test.assign(rows.begin() + static_cast<std::ptrdiff_t>(t), rows.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// Pipeline -----------------------------------------------------------------

loggen::ActivityLog load_corpus(const ExperimentConfig& cfg) {
  if (cfg.corpus) return loggen::generate_corpus(*cfg.corpus);
  auto parsed = loggen::parse_cert_csv(*cfg.cert_dir);
  return std::move(parsed.log);
}

std::uint64_t hash_features(const features::FeatureMatrix& fm) {
  auto h = hash_matrix(fm.values);
  return fnv1a(std::string_view(reinterpret_cast<const char*>(fm.labels.data()), fm.labels.size() * sizeof(int)), h);
}

PreparedData prepare(const features::FeatureMatrix& full, const ExperimentConfig& cfg) {
  full.validate();
  if (full.rows() < 4) throw Error(ErrorKind::Input, "too few user-days to split (" + std::to_string(full.rows()) + ")");
  const auto split_seed = derive_seed(cfg.seed, kSplitStream);
  const auto s = cfg.split.stratified ? stratified_split(full.labels, cfg.split.train_frac, split_seed)
                                      : random_split(full.rows(), cfg.split.train_frac, split_seed);
  PreparedData d;
  d.n_classes = static_cast<std::size_t>(full.n_classes());
  // Selection and scaling are fitted on the training rows only.
  auto [selected, report] = features::select_features(full.select_rows(s.train), cfg.correlation_threshold);
  std::vector<std::size_t> keep;
  for (const auto& name : selected.feature_names) {
    keep.push_back(static_cast<std::size_t>(
        std::find(full.feature_names.begin(), full.feature_names.end(), name) - full.feature_names.begin()));
  }
  auto [train, transform] = features::standardize(selected);
  d.train = std::move(train);
  d.transform = std::move(transform);
  d.test = d.transform.apply(full.select_rows(s.test).select_columns(keep));
  d.selection = std::move(report);
  d.test_hash = hash_features(d.test);
  return d;
}

AugmentResult run_augmenter(const features::FeatureMatrix& train, const AugmenterSpec& spec, std::size_t n_classes,
                            std::uint64_t seed) {
  AugmentResult r;
  r.synthetic.feature_names = train.feature_names;
  r.synthetic.values.resize(0, static_cast<Eigen::Index>(train.cols()));
  if (spec.is_none()) {
    r.train = train;
    return r;
  }
  const auto targets = augment::balance_targets(train, spec.ratio);
  const auto n0 = train.rows();

  if (!spec.is_gan()) {
    augment::AugmentPlan plan;
    plan.method = *augment::parse_method(spec.name);
    plan.per_class_target = targets;
    plan.k_neighbors = spec.k_neighbors;
    plan.n_components = spec.n_components;
    plan.sigma = spec.sigma;
    plan.seed = seed;
    r.train = augment::apply(train, plan);
  } else {
    // The GAN sees every malicious row plus a normal subsample no larger than
    // the biggest malicious class.
    const auto counts = train.class_counts();
    std::size_t cap = 0;
    for (std::size_t c = 1; c < counts.size(); ++c) cap = std::max(cap, counts[c]);
    std::vector<std::size_t> normal, rows;
    for (std::size_t i = 0; i < n0; ++i) (train.labels[i] == 0 ? normal : rows).push_back(i);
    Rng rng(derive_seed(seed, 2));
    std::shuffle(normal.begin(), normal.end(), rng);
    rows.insert(rows.end(), normal.begin(), normal.begin() + static_cast<std::ptrdiff_t>(std::min(cap, normal.size())));
    std::sort(rows.begin(), rows.end());
    const auto gan_set = train.select_rows(rows);

    auto gcfg = spec.gan;
    gcfg.mode = *gan::parse_mode(spec.name);
    gcfg.feature_dim = train.cols();
    gcfg.n_classes = n_classes;
    gcfg.seed = derive_seed(seed, 1);
    r.gan = gan::train(gan_set.values, gan_set.labels, gcfg);

    std::vector<Matrix> blocks;
    Labels labels;
    Eigen::Index extra = 0;
    for (const auto& [cls, target] : targets) {
      const auto have = counts[static_cast<std::size_t>(cls)];
      if (target <= have) continue;
      blocks.push_back(r.gan->sample(cls, target - have, derive_seed(seed, 1000 + static_cast<std::uint64_t>(cls))));
      labels.insert(labels.end(), target - have, cls);
      extra += blocks.back().rows();
    }
    r.train.feature_names = train.feature_names;
    r.train.values.resize(static_cast<Eigen::Index>(n0) + extra, static_cast<Eigen::Index>(train.cols()));
    r.train.values.topRows(static_cast<Eigen::Index>(n0)) = train.values;
    Eigen::Index at = static_cast<Eigen::Index>(n0);
    for (const auto& b : blocks) {
      r.train.values.middleRows(at, b.rows()) = b;
      at += b.rows();
    }
    r.train.labels = train.labels;
    r.train.labels.insert(r.train.labels.end(), labels.begin(), labels.end());
    if (!all_finite(r.train.values)) throw Error(ErrorKind::Numeric, spec.name + " generated non-finite rows");
  }

  const auto extra = static_cast<Eigen::Index>(r.train.rows() - n0);
  r.synthetic.values = r.train.values.bottomRows(extra);
  r.synthetic.labels.assign(r.train.labels.begin() + static_cast<std::ptrdiff_t>(n0), r.train.labels.end());
  return r;
}

// Provenance ---------------------------------------------------------------

std::map<std::string, std::string> make_provenance(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> p;
  p["config_hash"] = cfg.hash();
  p["created"] = utc_now();
  p["version"] = version_string();
  p["seed"] = std::to_string(cfg.seed);
  p["seeds"] = "split=" + hex64(derive_seed(cfg.seed, kSplitStream)) +
               " augment=" + hex64(derive_seed(cfg.seed, kAugmentStream)) +
               " detector=" + hex64(derive_seed(cfg.seed, kDetectorStream)) +
               " attack=" + hex64(derive_seed(cfg.seed, kAttackStream));
  if (cfg.corpus) p["corpus_seed"] = std::to_string(cfg.corpus->seed);
  return p;
}

std::vector<std::string> provenance_lines(const std::map<std::string, std::string>& provenance) {
  std::vector<std::string> out;
  for (const auto& [k, v] : provenance) out.push_back(k + "=" + v);
  return out;
}

void stamp_file(const fs::path& path, const std::vector<std::string>& provenance) {
  const auto ext = path.extension().string();
  if (ext == ".csv") {
    csv::write_atomic(path, comment_block(provenance) + csv::read_file(path));
  } else if (ext == ".json") {
    auto j = json::parse(csv::read_file(path));
    if (!j.is_object()) throw Error(ErrorKind::Format, path.string() + ": not a JSON object");
    j["provenance"] = provenance;
    csv::write_atomic(path, j.dump(2) + "\n");
  } else if (ext == ".ckpt") {
    auto c = checkpoint::load(path);
    auto j = json::parse(c.config_json);
    j["provenance"] = provenance;
    c.config_json = j.dump();
    checkpoint::save(c, path);
  } else {
    throw Error(ErrorKind::Spec, path.string() + ": no provenance convention for '" + ext + "' files");
  }
}

std::vector<std::string> verify(const fs::path& dir) {
  std::vector<std::string> problems;
  const auto config_path = dir / "config.json";
  if (!fs::exists(config_path)) return {config_path.string() + ": missing"};
  std::string expected;
  try {
    const auto j = json::parse(csv::read_file(config_path));
    expected = ExperimentConfig::from_json(j.at("config").dump()).hash();
    const auto recorded = lookup(json_provenance(j), "config_hash");
    if (recorded != expected) {
      problems.push_back(config_path.string() + ": recorded hash " + recorded.value_or("<none>") + " but config hashes to " +
                         expected);
    }
  } catch (const std::exception& e) {
    return {config_path.string() + ": " + e.what()};
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path() != config_path) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto ext = f.extension().string();
    std::vector<std::string> lines;
    try {
      if (ext == ".csv") {
        lines = read_comment_lines(f);
      } else if (ext == ".json") {
        lines = json_provenance(json::parse(csv::read_file(f)));
      } else if (ext == ".ckpt") {
        lines = json_provenance(json::parse(checkpoint::load(f).config_json));
      } else {
        problems.push_back(f.string() + ": unexpected file type");
        continue;
      }
    } catch (const std::exception& e) {
      problems.push_back(f.string() + ": " + e.what());
      continue;
    }
    const auto h = lookup(lines, "config_hash");
    if (!h) {
      problems.push_back(f.string() + ": no provenance block");
    } else if (*h != expected) {
      problems.push_back(f.string() + ": config_hash " + *h + " does not match " + expected);
    }
  }
  return problems;
}

// Outputs ------------------------------------------------------------------

void write_results_csv(const std::vector<CellResult>& cells, const fs::path& path,
                       const std::vector<std::string>& provenance) {
  std::string out = comment_block(provenance) + "method,dataset,P,R,F,K,MCC\n";
  for (const auto& c : cells) {
    const auto& r = c.report;
    out += csv::join({c.method, c.dataset, num(r.precision), num(r.recall), num(r.f1), num(r.kappa), num(r.mcc)}) + "\n";
  }
  csv::write_atomic(path, out);
}

namespace {

void write_robustness_csv(const std::vector<CellResult>& cells, const fs::path& path,
                          const std::vector<std::string>& provenance) {
  std::string out = comment_block(provenance) +
                    "attack,method,dataset,P,R,F,K,MCC,clean_F,mean_linf,mean_l2,injected_rows,unflipped_rows\n";
  for (const auto& c : cells) {
    for (const auto& rb : c.robustness) {
      const auto& r = rb.attacked_report;
      out += csv::join({adversarial::to_string(rb.attack.kind), c.method, c.dataset, num(r.precision), num(r.recall),
                        num(r.f1), num(r.kappa), num(r.mcc), num(rb.clean_report.f1), num(rb.mean_perturbation_linf),
                        num(rb.mean_perturbation_l2), std::to_string(rb.injected_rows),
                        std::to_string(rb.unflipped_rows)}) +
             "\n";
    }
  }
  csv::write_atomic(path, out);
}

void write_fidelity_csv(const std::vector<FidelityRow>& rows, const fs::path& path,
                        const std::vector<std::string>& provenance) {
  std::string out = comment_block(provenance) + "dataset,spca,k,similarity_score,silhouette_real,silhouette_synth\n";
  for (const auto& r : rows) {
    const auto& s = r.scores;
    out += csv::join({r.dataset, num(s.spca), std::to_string(s.k_used), num(s.similarity_score),
                      num(s.silhouette_real), num(s.silhouette_synth)}) +
           "\n";
  }
  csv::write_atomic(path, out);
}

json report_json(const detect::ClassificationReport& r) {
  return {{"P", r.precision}, {"R", r.recall}, {"F", r.f1}, {"K", r.kappa}, {"MCC", r.mcc}, {"confusion", r.confusion}};
}

}  // namespace

std::vector<fs::path> emit_plots(const features::FeatureMatrix& real, const features::FeatureMatrix& synth,
                                 const gan::GanModel* gan, const fs::path& dir,
                                 const std::vector<std::string>& provenance, std::size_t kde_features,
                                 std::size_t kde_points) {
  if (real.rows() == 0) throw Error(ErrorKind::Input, "emit_plots: no real rows");
  if (synth.rows() > 0 && synth.cols() != real.cols()) throw Error(ErrorKind::Range, "emit_plots: column counts differ");
  if (kde_points < 2) throw Error(ErrorKind::Range, "emit_plots: kde_points must be >= 2");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, dir.string() + ": " + ec.message());

  std::vector<fs::path> files;
  const auto head = comment_block(provenance);

  // PCA scatter: the basis comes from the real rows; a rank-1 sample gets a zero second axis.
  {
    Matrix proj_r = Matrix::Zero(static_cast<Eigen::Index>(real.rows()), 2);
    Matrix proj_s = Matrix::Zero(static_cast<Eigen::Index>(synth.rows()), 2);
    if (real.rows() >= 3 && real.cols() >= 1) {
      const auto max_k = std::min<std::size_t>({2, real.cols(), real.rows() - 1});
      for (std::size_t k = max_k; k >= 1; --k) {
        try {
          const auto b = linmetrics::pca_fit(real.values, k);
          const auto kk = static_cast<Eigen::Index>(k);
          proj_r.leftCols(kk) = (real.values.rowwise() - b.center.transpose()) * b.loadings;
          if (synth.rows() > 0) proj_s.leftCols(kk) = (synth.values.rowwise() - b.center.transpose()) * b.loadings;
          break;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Numeric) throw;
        }
      }
    }
    std::string out = head + "pc1,pc2,source,label\n";
    auto rows = [&](const Matrix& p, const Labels& y, const char* source) {
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        out += num_full(p(i, 0)) + "," + num_full(p(i, 1)) + "," + source + "," +
               std::to_string(y[static_cast<std::size_t>(i)]) + "\n";
      }
    };
    rows(proj_r, real.labels, "real");
    rows(proj_s, synth.labels, "synthetic");
    write_text(dir / "pca_scatter.csv", out, &files);
  }

  // KDE per selected feature over min-3h .. max+3h of the pooled values.
  for (std::size_t j = 0; j < std::min(kde_features, real.cols()); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    Vector pooled(real.values.rows() + synth.values.rows());
    pooled << real.values.col(col), (synth.rows() > 0 ? Vector(synth.values.col(col)) : Vector());
    const double h = linmetrics::silverman_bandwidth(pooled);
    const Vector grid = Vector::LinSpaced(static_cast<Eigen::Index>(kde_points), pooled.minCoeff() - 3.0 * h,
                                          pooled.maxCoeff() + 3.0 * h);
    const Vector dr = linmetrics::kde_curve(real.values.col(col), grid, h);
    const Vector ds = synth.rows() > 0 ? linmetrics::kde_curve(synth.values.col(col), grid, h)
                                       : Vector(Vector::Zero(grid.size()));
    std::string out = head + "grid,real_density,synth_density\n";
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
      out += num_full(grid(g)) + "," + num_full(dr(g)) + "," + num_full(ds(g)) + "\n";
    }
    write_text(dir / ("kde_" + file_safe(real.feature_names[j]) + ".csv"), out, &files);
  }

  if (gan) {
    std::string out = head + "epoch,spca\n";
    for (const auto& e : gan->history) out += std::to_string(e.epoch) + "," + num_full(e.spca_trace) + "\n";
    write_text(dir / "spca_trace.csv", out, &files);
  }
  return files;
}

QualityReport run(const ExperimentConfig& cfg) {
  staged("config", [&] { cfg.validate(); });
  QualityReport q;
  q.provenance = make_provenance(cfg);
  const auto prov = provenance_lines(q.provenance);
  const auto& out = cfg.output_dir;

  staged("output", [&] {
    fs::create_directories(out);
    json c = {{"config", json::parse(cfg.to_json())}, {"provenance", prov}};
    write_text(out / "config.json", c.dump(2) + "\n", &q.files);
  });

  const auto log = staged("corpus", [&] { return load_corpus(cfg); });
  const auto full = staged("featurize", [&] { return features::extract_features(log); });
  const auto data = staged("split", [&] { return prepare(full, cfg); });

  json report = {{"provenance", prov},
                 {"rows", {{"train", data.train.rows()}, {"test", data.test.rows()}}},
                 {"class_counts", {{"train", data.train.class_counts()}, {"test", data.test.class_counts()}}},
                 {"features", data.train.feature_names},
                 {"detection", json::array()}};
  json dropped = json::array();
  for (const auto& d : data.selection.dropped) dropped.push_back({d.name, d.correlated_with, d.abs_r});
  report["dropped_features"] = dropped;

  auto check_test = [&] {
    if (hash_features(data.test) != data.test_hash) {
      throw Error(ErrorKind::Spec, "test split changed after augmentation (leakage)");
    }
  };

  auto flush = [&] {
    write_results_csv(q.cells, out / "results.csv", prov);
    if (!cfg.attacks.empty()) write_robustness_csv(q.cells, out / "robustness.csv", prov);
    if (!q.fidelity.empty()) write_fidelity_csv(q.fidelity, out / "fidelity.csv", prov);
    csv::write_atomic(out / "report.json", report.dump(2) + "\n");
  };

  for (const auto& spec : cfg.augmenters) {
    const auto label = spec.dataset_label();
    const auto aug = staged("augment:" + spec.name, [&] {
      return run_augmenter(data.train, spec, data.n_classes, derive_seed(cfg.seed, kAugmentStream));
    });
    staged("evaluate", check_test);

    if (aug.synthetic.rows() >= 2) {
      staged("fidelity:" + spec.name, [&] {
        // Synthetic rows are compared with the real training rows of the classes they extend.
        std::set<int> classes(aug.synthetic.labels.begin(), aug.synthetic.labels.end());
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < data.train.rows(); ++i) {
          if (classes.count(data.train.labels[i])) rows.push_back(i);
        }
        const auto real = data.train.select_rows(rows);
        const auto scores = linmetrics::fidelity(real.values, real.labels, aug.synthetic.values, aug.synthetic.labels);
        q.fidelity.push_back({label, scores});
        report["fidelity"][label] = {{"spca", scores.spca},
                                     {"k", scores.k_used},
                                     {"similarity_score", scores.similarity_score},
                                     {"silhouette_real", scores.silhouette_real},
                                     {"silhouette_synth", scores.silhouette_synth}};
        if (cfg.emit_plots) {
          auto files = emit_plots(real, aug.synthetic, aug.gan ? &*aug.gan : nullptr, out / "plots" / label, prov,
                                  cfg.kde_features, cfg.kde_points);
          q.files.insert(q.files.end(), files.begin(), files.end());
        }
      });
    }
    if (aug.gan) {
      staged("augment:" + spec.name, [&] {
        const auto p = out / ("gan_history_" + label + ".csv");
        gan::write_history_csv(*aug.gan, p, prov);
        q.files.push_back(p);
      });
    }

    for (const auto& base : cfg.detectors) {
      auto dcfg = base;
      dcfg.n_classes = data.n_classes;
      dcfg.feature_dim = data.train.cols();
      dcfg.seed = derive_seed(cfg.seed, kDetectorStream);
      const auto method = detect::to_string(dcfg.kind);
      CellResult cell;
      cell.method = method;
      cell.dataset = label;
      const auto det = staged("train-detector:" + method, [&] {
        auto d = detect::Detector::build(dcfg);
        d.fit(aug.train);
        return d;
      });
      staged("evaluate", [&] {
        check_test();
        cell.report = detect::evaluate(det.predict(data.test.values), data.test.labels);
      });
      for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
        auto acfg = cfg.attacks[a];
        acfg.seed = derive_seed(cfg.seed, kAttackStream + a);
        cell.robustness.push_back(staged("attack:" + adversarial::to_string(acfg.kind),
                                         [&] { return adversarial::robustness_eval(det, data.test, acfg); }));
      }
      json jc = {{"method", method}, {"dataset", label}, {"report", report_json(cell.report)}};
      for (const auto& rb : cell.robustness) {
        jc["robustness"].push_back({{"attack", adversarial::to_string(rb.attack.kind)},
                                    {"epsilon", rb.attack.epsilon},
                                    {"clean", report_json(rb.clean_report)},
                                    {"attacked", report_json(rb.attacked_report)},
                                    {"mean_linf", rb.mean_perturbation_linf},
                                    {"mean_l2", rb.mean_perturbation_l2},
                                    {"injected_rows", rb.injected_rows},
                                    {"unflipped_rows", rb.unflipped_rows}});
      }
      report["detection"].push_back(jc);
      q.cells.push_back(std::move(cell));
      staged("report", flush);
    }
  }

  staged("report", flush);
  for (const auto* name : {"results.csv", "robustness.csv", "fidelity.csv", "report.json"}) {
    if (fs::exists(out / name)) q.files.push_back(out / name);
  }
  return q;
}

}  // namespace spcagan::experiment
