#include "spcagan/experiment.hpp"

#include "spcagan/csv.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace spcagan;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  c.seed_opt = cmd->add_option("--seed", c.seed, "Master seed (overrides config and SPCAGAN_SEED)");
  auto* o = cmd->add_option("--out", c.out, "Output directory (overrides config and SPCAGAN_OUTPUT_DIR)");
  if (out_required) o->required();
}

experiment::ExperimentConfig load_config(const Common& c) {
  experiment::ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = experiment::ExperimentConfig::load(c.config);
  } else {
    cfg.corpus = loggen::CorpusSpec{};
    cfg.apply_env_overrides();
  }
  if (c.seed_opt && c.seed_opt->count() > 0) cfg.seed = c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

// Creates the output directory and records the resolved config there.
std::vector<std::string> begin_output(const experiment::ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const auto prov = experiment::provenance_lines(experiment::make_provenance(cfg));
  json j = {{"config", json::parse(cfg.to_json())}, {"provenance", prov}};
  csv::write_atomic(cfg.output_dir / "config.json", j.dump(2) + "\n");
  return prov;
}

features::FeatureMatrix read_features(const std::string& path) { return features::read_feature_csv(path).matrix; }

void write_features(const features::FeatureMatrix& fm, const fs::path& path, const std::vector<std::string>& prov,
                    const std::optional<features::Standardizer>& t = std::nullopt) {
  features::write_feature_csv(fm, path, t, prov);
}

const experiment::AugmenterSpec& first_gan(const experiment::ExperimentConfig& cfg) {
  for (const auto& a : cfg.augmenters) {
    if (a.is_gan()) return a;
  }
  static const experiment::AugmenterSpec fallback = [] {
    experiment::AugmenterSpec a;
    a.name = "SPCAGAN";
    return a;
  }();
  return fallback;
}

std::vector<adversarial::AttackConfig> attacks_or_default(const experiment::ExperimentConfig& cfg) {
  if (!cfg.attacks.empty()) return cfg.attacks;
  adversarial::AttackConfig f, d;
  d.kind = adversarial::AttackKind::DEEPFOOL;
  return {f, d};
}

void print_files(const std::vector<fs::path>& files) {
  for (const auto& f : files) std::cout << f.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Insider-threat data synthesis and detection toolkit"};
  app.set_version_flag("--version", experiment::version_string());
  app.require_subcommand(1);

  Common c;
  std::string corpus_dir, train_csv, test_csv, model_path, verify_dir;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic CERT-style activity corpus");
  add_common(gen, c);

  auto* feat = app.add_subcommand("featurize", "Extract, select and standardize user-day features");
  add_common(feat, c);
  feat->add_option("--corpus", corpus_dir, "CERT CSV directory (overrides the config corpus)")->check(CLI::ExistingDirectory);

  auto* aug = app.add_subcommand("augment", "Balance a training feature table with the configured augmenter");
  add_common(aug, c);
  aug->add_option("--train", train_csv, "Training feature CSV")->required()->check(CLI::ExistingFile);

  auto* tgan = app.add_subcommand("train-gan", "Train the configured GAN on a training feature table");
  add_common(tgan, c);
  tgan->add_option("--train", train_csv, "Training feature CSV")->required()->check(CLI::ExistingFile);

  auto* tdet = app.add_subcommand("train-detector", "Train the configured detector");
  add_common(tdet, c);
  tdet->add_option("--train", train_csv, "Training feature CSV")->required()->check(CLI::ExistingFile);

  auto* atk = app.add_subcommand("attack", "Run the configured attacks against a trained detector");
  add_common(atk, c);
  atk->add_option("--model", model_path, "Detector checkpoint")->required()->check(CLI::ExistingFile);
  atk->add_option("--test", test_csv, "Test feature CSV")->required()->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("report", "Evaluate a trained detector on a test table");
  add_common(rep, c);
  rep->add_option("--model", model_path, "Detector checkpoint")->required()->check(CLI::ExistingFile);
  rep->add_option("--test", test_csv, "Test feature CSV")->required()->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "Run the full pipeline for every configured augmenter and detector");
  add_common(run, c, false);

  auto* ver = app.add_subcommand("verify", "Check the provenance of every file in an output directory");
  ver->add_option("--out,dir", verify_dir, "Output directory to verify")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (ver->parsed()) {
      const auto problems = experiment::verify(verify_dir);
      for (const auto& p : problems) std::cerr << p << "\n";
      if (!problems.empty()) {
        std::cerr << "spcagan: [verify] " << problems.size() << " problem(s)\n";
        return 1;
      }
      std::cout << "verified " << verify_dir << "\n";
      return 0;
    }

    auto cfg = load_config(c);
    if (feat->parsed() && !corpus_dir.empty()) {
      cfg.corpus.reset();
      cfg.cert_dir = corpus_dir;
    }
    // gen-corpus has no other seed to apply --seed to.
    if (gen->parsed() && c.seed_opt->count() > 0) {
      if (!cfg.corpus) throw Error(ErrorKind::Spec, "config names a cert_dir; nothing to generate");
      cfg.corpus->seed = c.seed;
    }
    cfg.validate();
    const auto& out = cfg.output_dir;

    if (run->parsed()) {
      stage = "run";
      const auto q = experiment::run(cfg);
      print_files(q.files);
      return 0;
    }

    const auto prov = begin_output(cfg);

    if (gen->parsed()) {
      const auto log = loggen::generate_corpus(*cfg.corpus);
      loggen::write_cert_csv(log, out);
      for (const auto& e : fs::directory_iterator(out)) {
        if (e.path().extension() == ".csv") experiment::stamp_file(e.path(), prov);
      }
      std::cout << out.string() << ": " << log.logon.size() + log.email.size() + log.http.size() + log.device.size() +
                                               log.file.size()
                << " events, " << log.answers.size() << " malicious user-days\n";
    } else if (feat->parsed()) {
      stage = "corpus";
      const auto log = experiment::load_corpus(cfg);
      stage = "featurize";
      const auto full = features::extract_features(log);
      const auto data = experiment::prepare(full, cfg);
      write_features(full, out / "features.csv", prov);
      write_features(data.train, out / "train.csv", prov, data.transform);
      write_features(data.test, out / "test.csv", prov, data.transform);
      std::cout << "features: " << full.rows() << " user-days x " << full.cols() << "; kept " << data.train.cols()
                << " after selection; train " << data.train.rows() << ", test " << data.test.rows() << "\n";
    } else if (aug->parsed()) {
      const auto train = read_features(train_csv);
      const auto& spec = cfg.augmenters.front();
      const auto r = experiment::run_augmenter(train, spec, static_cast<std::size_t>(train.n_classes()),
                                               derive_seed(cfg.seed, 20));
      write_features(r.train, out / "augmented.csv", prov);
      write_features(r.synthetic, out / "synthetic.csv", prov);
      if (r.gan) {
        r.gan->save(out / "gan.ckpt");
        experiment::stamp_file(out / "gan.ckpt", prov);
      }
      std::cout << spec.name << ": " << train.rows() << " -> " << r.train.rows() << " rows\n";
    } else if (tgan->parsed()) {
      const auto train = read_features(train_csv);
      const auto& spec = first_gan(cfg);
      const auto r = experiment::run_augmenter(train, spec, static_cast<std::size_t>(train.n_classes()),
                                               derive_seed(cfg.seed, 20));
      r.gan->save(out / "gan.ckpt");
      experiment::stamp_file(out / "gan.ckpt", prov);
      gan::write_history_csv(*r.gan, out / "gan_history.csv", prov);
      std::cout << spec.name << ": " << r.gan->history.size() << " epochs, " << r.gan->spca_skips
                << " skipped regularizer batches\n";
    } else if (tdet->parsed()) {
      const auto train = read_features(train_csv);
      auto dcfg = cfg.detectors.front();
      dcfg.n_classes = static_cast<std::size_t>(train.n_classes());
      dcfg.feature_dim = train.cols();
      dcfg.seed = derive_seed(cfg.seed, 30);
      auto det = detect::Detector::build(dcfg);
      det.fit(train);
      det.save(out / "detector.ckpt");
      experiment::stamp_file(out / "detector.ckpt", prov);
      std::string hist = "epoch,loss,kl\n";
      for (std::size_t e = 0; e < det.loss_history().size(); ++e) {
        hist += std::to_string(e + 1) + "," + std::to_string(det.loss_history()[e]) + "," +
                (e < det.kl_history().size() ? std::to_string(det.kl_history()[e]) : "0") + "\n";
      }
      csv::write_atomic(out / "detector_history.csv", hist);
      experiment::stamp_file(out / "detector_history.csv", prov);
      std::cout << detect::to_string(dcfg.kind) << ": " << det.param_count() << " parameters\n";
    } else if (atk->parsed() || rep->parsed()) {
      const auto det = detect::Detector::load(model_path);
      const auto test = read_features(test_csv);
      experiment::CellResult cell;
      cell.method = detect::to_string(det.config().kind);
      cell.dataset = cfg.augmenters.front().dataset_label();
      cell.report = detect::evaluate(det.predict(test.values), test.labels);
      if (atk->parsed()) {
        const auto attacks = attacks_or_default(cfg);
        std::string out_csv = "attack,method,dataset,P,R,F,K,MCC,clean_F,mean_linf,mean_l2\n";
        for (std::size_t a = 0; a < attacks.size(); ++a) {
          auto acfg = attacks[a];
          acfg.seed = derive_seed(cfg.seed, 40 + a);
          const auto rb = adversarial::robustness_eval(det, test, acfg);
          const auto& r = rb.attacked_report;
          out_csv += csv::join({adversarial::to_string(acfg.kind), cell.method, cell.dataset, std::to_string(r.precision),
                                std::to_string(r.recall), std::to_string(r.f1), std::to_string(r.kappa),
                                std::to_string(r.mcc), std::to_string(rb.clean_report.f1),
                                std::to_string(rb.mean_perturbation_linf), std::to_string(rb.mean_perturbation_l2)}) +
                     "\n";
          std::cout << adversarial::to_string(acfg.kind) << ": F " << rb.clean_report.f1 << " -> " << r.f1 << "\n";
        }
        csv::write_atomic(out / "robustness.csv", out_csv);
        experiment::stamp_file(out / "robustness.csv", prov);
      } else {
        experiment::write_results_csv({cell}, out / "results.csv", prov);
        std::cout << cell.method << " on " << test.rows() << " rows: F " << cell.report.f1 << ", K "
                  << cell.report.kappa << ", MCC " << cell.report.mcc << "\n";
      }
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "spcagan: " << experiment::stage_error(stage, e).what() << "\n";
    return 1;
  }
}
