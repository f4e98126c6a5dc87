#pragma once

#include "spcagan/adversarial.hpp"
#include "spcagan/augment.hpp"
#include "spcagan/common.hpp"
#include "spcagan/detect.hpp"
#include "spcagan/features.hpp"
#include "spcagan/gan.hpp"
#include "spcagan/linmetrics.hpp"
#include "spcagan/loggen.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spcagan::experiment {

// "spcagan <major.minor.patch>".
std::string version_string();

// NONE, the four classical augmenters, or one of the GAN modes.
struct AugmenterSpec {
  std::string name = "NONE";
  double ratio = 1.0;  // malicious class target as a fraction of the normal count
  std::size_t k_neighbors = 5;
  std::size_t n_components = 1;
  double sigma = 0.1;
  gan::GanConfig gan;  // mode/feature_dim/n_classes/seed are filled in at run time

  bool is_gan() const;
  bool is_none() const { return name == "NONE"; }
  // Label used in result tables ("REAL" for NONE).
  std::string dataset_label() const;
};

struct SplitSpec {
  double train_frac = 0.7;
  bool stratified = true;
};

struct ExperimentConfig {
  std::optional<loggen::CorpusSpec> corpus;  // exactly one of corpus / cert_dir
  std::optional<std::filesystem::path> cert_dir;
  double correlation_threshold = 0.95;
  SplitSpec split;
  std::vector<AugmenterSpec> augmenters{AugmenterSpec{}};
  std::vector<detect::DetectorConfig> detectors{detect::DetectorConfig{}};
  std::vector<adversarial::AttackConfig> attacks;
  std::filesystem::path output_dir = "spcagan-out";
  std::uint64_t seed = 1;
  bool emit_plots = true;
  std::size_t kde_features = 5;  // first N selected features get a KDE file
  std::size_t kde_points = 200;

  void validate() const;
  // Canonical JSON (sorted keys), the basis of the provenance hash.
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  // Reads a JSON file, then applies SPCAGAN_SEED / SPCAGAN_OUTPUT_DIR.
  static ExperimentConfig load(const std::filesystem::path& path);
  void apply_env_overrides();
  std::string hash() const;
};

// Per-class proportional split with largest-remainder rounding.
struct Split {
  std::vector<std::size_t> train, test;  // ascending row indices
};
Split stratified_split(const Labels& labels, double frac, std::uint64_t seed);
Split random_split(std::size_t n, double frac, std::uint64_t seed);

// Everything downstream of the corpus that does not depend on the augmenter.
struct PreparedData {
  features::FeatureMatrix train;  // selected + standardized
  features::FeatureMatrix test;
  features::SelectionReport selection;
  features::Standardizer transform;
  std::size_t n_classes = 0;
  std::uint64_t test_hash = 0;
};

loggen::ActivityLog load_corpus(const ExperimentConfig& cfg);
PreparedData prepare(const features::FeatureMatrix& full, const ExperimentConfig& cfg);
std::uint64_t hash_features(const features::FeatureMatrix& fm);

struct AugmentResult {
  features::FeatureMatrix train;       // original rows followed by synthetic rows
  features::FeatureMatrix synthetic;   // the appended rows only
  std::optional<gan::GanModel> gan;
};

AugmentResult run_augmenter(const features::FeatureMatrix& train, const AugmenterSpec& spec, std::size_t n_classes,
                            std::uint64_t seed);

struct CellResult {
  std::string method;   // detector kind
  std::string dataset;  // augmenter label
  detect::ClassificationReport report;
  std::vector<adversarial::RobustnessReport> robustness;
};

struct FidelityRow {
  std::string dataset;
  linmetrics::FidelityScores scores;
};

struct QualityReport {
  std::vector<CellResult> cells;
  std::vector<FidelityRow> fidelity;
  std::map<std::string, std::string> provenance;
  std::vector<std::filesystem::path> files;
};

// Runs every augmenter x detector cell and writes results.csv, fidelity.csv,
// robustness.csv, report.json, config.json and (optionally) plot data.
QualityReport run(const ExperimentConfig& cfg);

// Point files for plotting; returns the written paths.
std::vector<std::filesystem::path> emit_plots(const features::FeatureMatrix& real, const features::FeatureMatrix& synth,
                                              const gan::GanModel* gan, const std::filesystem::path& dir,
                                              const std::vector<std::string>& provenance, std::size_t kde_features,
                                              std::size_t kde_points);

std::vector<std::string> provenance_lines(const std::map<std::string, std::string>& provenance);
std::map<std::string, std::string> make_provenance(const ExperimentConfig& cfg);

// Adds provenance to an existing artifact: '#' lines atop a CSV, a
// "provenance" key in a JSON object or in a checkpoint's config JSON.
void stamp_file(const std::filesystem::path& path, const std::vector<std::string>& provenance);

// Checks that every emitted file in `dir` carries provenance whose config
// hash matches config.json. Returns problems; empty means verified.
std::vector<std::string> verify(const std::filesystem::path& dir);

// Writes `rows` as results-table CSV (method,dataset,P,R,F,K,MCC).
void write_results_csv(const std::vector<CellResult>& cells, const std::filesystem::path& path,
                       const std::vector<std::string>& provenance);

// The error prefix used for stage failures, e.g. "[featurize] ...".
Error stage_error(const std::string& stage, const std::exception& e);

}  // namespace spcagan::experiment
