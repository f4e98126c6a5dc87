#include "spcagan/csv.hpp"
#include "spcagan/experiment.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>

using namespace spcagan;
using namespace spcagan::experiment;
namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> train_counts(const Labels& labels, const Split& s) {
  std::vector<std::size_t> c;
  for (auto i : s.train) {
    const auto l = static_cast<std::size_t>(labels[i]);
    if (c.size() <= l) c.resize(l + 1);
    ++c[l];
  }
  return c;
}

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  loggen::CorpusSpec s;
  s.n_users = 10;
  s.n_days = 20;
  s.n_insiders = 2;
  s.scenarios = {1, 2};
  s.seed = 3;
  s.burst_min_days = 5;
  s.burst_max_days = 6;
  c.corpus = s;
  AugmenterSpec none, ros, noise;
  ros.name = "ROS";
  noise.name = "NOISE";
  c.augmenters = {none, ros, noise};
  detect::DetectorConfig d;
  d.kind = detect::Kind::MLP;
  d.hidden = {16};
  d.epochs = 5;
  c.detectors = {d};
  c.output_dir = out;
  c.kde_features = 2;
  c.kde_points = 25;
  return c;
}

// File content without '#' provenance lines.
std::string body(const fs::path& p) {
  std::string out, line;
  std::ifstream in(p);
  while (std::getline(in, line)) {
    if (line.rfind('#', 0) != 0) out += line + "\n";
  }
  return out;
}

std::size_t data_rows(const fs::path& p) { return csv::read(p).rows.size(); }

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("stratified split uses largest-remainder rounding") {
    Labels a(10, 0);
    a.insert(a.end(), 3, 1);
    const auto s = stratified_split(a, 0.7, 1);
    CHECK(train_counts(a, s) == std::vector<std::size_t>{7, 2});
    CHECK(s.train.size() + s.test.size() == a.size());

    Labels b(5, 0);
    b.insert(b.end(), 5, 1);
    CHECK(train_counts(b, stratified_split(b, 0.5, 1)) == std::vector<std::size_t>{3, 2});

    // Every class keeps at least one row on each side.
    Labels c(50, 0);
    c.insert(c.end(), 2, 1);
    const auto sc = stratified_split(c, 0.9, 2);
    CHECK(train_counts(c, sc)[1] == 1);

    CHECK_THROWS_AS(stratified_split(Labels{0, 0, 1}, 0.5, 1), Error);
  }

  TEST_CASE("splits partition the rows and depend only on the seed") {
    Labels y(60);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 4);
    const auto a = stratified_split(y, 0.7, 5), b = stratified_split(y, 0.7, 5);
    CHECK(a.train == b.train);
    CHECK(std::is_sorted(a.train.begin(), a.train.end()));
    std::vector<std::size_t> all = a.train;
    all.insert(all.end(), a.test.begin(), a.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    CHECK(stratified_split(y, 0.7, 6).train != a.train);
    const auto r = random_split(60, 0.7, 5);
    CHECK(r.train.size() == 42);
    CHECK(r.test.size() == 18);
  }

  TEST_CASE("config JSON round-trips and accepts shorthand") {
    auto c = tiny("out");
    AugmenterSpec g;
    g.name = "SPCAGAN";
    g.gan.max_epochs = 7;
    c.augmenters.push_back(g);
    adversarial::AttackConfig atk;
    atk.kind = adversarial::AttackKind::DEEPFOOL;
    c.attacks = {atk};
    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(back.augmenters.back().gan.max_epochs == 7);

    const auto s = ExperimentConfig::from_json(
        R"({"cert_dir": "data", "augmenter": "smote", "detector": "CNN1D", "seed": 9})");
    CHECK(s.augmenters.size() == 1);
    CHECK(s.augmenters[0].name == "SMOTE");
    CHECK(s.detectors[0].kind == detect::Kind::CNN1D);
    CHECK(s.seed == 9);
    s.validate();

    CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"augmenter": "ROS", "augmenters": ["GMM"]})"), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_json("[1, 2]"), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_json("{"), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"augmenter": "NOPE", "cert_dir": "x"})").validate(), Error);
  }

  TEST_CASE("the output directory does not change the hash") {
    const auto a = tiny("one"), b = tiny("two");
    CHECK(a.hash() == b.hash());
    auto c = tiny("one");
    c.seed = 2;
    CHECK(c.hash() != a.hash());
  }

  TEST_CASE("environment overrides apply after the file") {
    const auto dir = testing::scratch_dir("exp_env");
    csv::write_atomic(dir / "c.json", R"({"cert_dir": "corpus", "seed": 4, "output_dir": "o"})");
    ::setenv("SPCAGAN_SEED", "77", 1);
    ::setenv("SPCAGAN_OUTPUT_DIR", "/tmp/elsewhere", 1);
    const auto c = ExperimentConfig::load(dir / "c.json");
    ::unsetenv("SPCAGAN_SEED");
    ::unsetenv("SPCAGAN_OUTPUT_DIR");
    CHECK(c.seed == 77);
    CHECK(c.output_dir == "/tmp/elsewhere");
    CHECK(*c.cert_dir == dir / "corpus");
    ::setenv("SPCAGAN_SEED", "abc", 1);
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "c.json"), Error);
    ::unsetenv("SPCAGAN_SEED");
  }

  TEST_CASE("pipeline runs are reproducible and verifiable") {
    const auto d1 = testing::scratch_dir("exp_run1"), d2 = testing::scratch_dir("exp_run2");
    const auto q1 = run(tiny(d1));
    const auto q2 = run(tiny(d2));
    REQUIRE(q1.cells.size() == 3);
    CHECK(q1.cells[0].dataset == "REAL");
    CHECK(q1.cells[1].dataset == "ROS");
    CHECK(body(d1 / "results.csv") == body(d2 / "results.csv"));
    CHECK(body(d1 / "fidelity.csv") == body(d2 / "fidelity.csv"));
    CHECK(data_rows(d1 / "results.csv") == 3);
    CHECK(data_rows(d1 / "fidelity.csv") == 2);
    CHECK_FALSE(fs::exists(d1 / "robustness.csv"));
    for (const auto& f : q1.files) CHECK(fs::exists(f));
    CHECK(q1.provenance.at("config_hash") == tiny(d1).hash());

    const auto problems = verify(d1);
    for (const auto& p : problems) MESSAGE(p);
    CHECK(problems.empty());

    // Tampering with a provenance line is detected.
    const auto results = csv::read_file(d1 / "results.csv");
    const auto pos = results.find("config_hash=") + 12;
    auto tampered = results;
    tampered[pos] = tampered[pos] == '0' ? '1' : '0';
    csv::write_atomic(d1 / "results.csv", tampered);
    CHECK(verify(d1).size() == 1);
    csv::write_atomic(d1 / "stray.txt", "x");
    CHECK(verify(d1).size() == 2);
    csv::write_atomic(d1 / "results.csv", body(d1 / "results.csv"));
    CHECK(verify(d1).size() == 2);
  }

  TEST_CASE("plot files have the expected shape") {
    Rng rng(3);
    features::FeatureMatrix real, synth;
    real.values = testing::gaussian(30, 4, rng);
    real.labels.assign(30, 1);
    real.feature_names = {"a", "b c", "d/e", "f"};
    synth = real.select_rows({0, 1, 2, 3, 4, 5, 6, 7});
    const auto dir = testing::scratch_dir("exp_plots");
    const auto files = emit_plots(real, synth, nullptr, dir, {"seed=1"}, 2, 50);
    CHECK(files.size() == 3);
    CHECK(data_rows(dir / "pca_scatter.csv") == 38);
    CHECK(fs::exists(dir / "kde_b_c.csv"));
    CHECK_FALSE(fs::exists(dir / "spca_trace.csv"));
    const auto kde = csv::read(dir / "kde_a.csv");
    REQUIRE(kde.rows.size() == 50);
    Vector pooled(38);
    pooled << real.values.col(0), synth.values.col(0);
    const double h = linmetrics::silverman_bandwidth(pooled);
    const double lo = pooled.minCoeff() - 3 * h;
    CHECK(std::stod(kde.rows.back()[0]) == doctest::Approx(pooled.maxCoeff() + 3 * h));
    CHECK(std::stod(kde.rows.front()[0]) == doctest::Approx(lo));
    CHECK(std::stod(kde.rows.front()[1]) >= 0.0);

    gan::GanConfig gc;
    gc.feature_dim = 4;
    gc.gen_hidden = {8};
    gc.batch_size = 8;
    gc.max_epochs = 2;
    gc.trace_samples = 16;
    Labels y(30, 0);
    for (std::size_t i = 0; i < 10; ++i) y[i] = 1;
    const auto g = gan::train(real.values, y, gc);
    emit_plots(real, synth, &g, dir, {"seed=1"}, 2, 50);
    CHECK(data_rows(dir / "spca_trace.csv") == 2);
  }

  TEST_CASE("stage errors carry the stage once") {
    const auto e = stage_error("featurize", Error(ErrorKind::Input, "no rows"));
    CHECK(std::string(e.what()) == "[featurize] input error: no rows");
    CHECK(std::string(stage_error("run", e).what()) == std::string(e.what()));
    CHECK(std::string(stage_error("x", std::runtime_error("boom")).what()) == "[x] io error: boom");
  }

  TEST_CASE("a missing corpus directory is an input error") {
    auto c = tiny(testing::scratch_dir("exp_missing"));
    c.corpus.reset();
    c.cert_dir = "/nonexistent/spcagan";
    CHECK_THROWS_AS(run(c), Error);
  }
}
