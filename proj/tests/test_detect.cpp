#include "spcagan/detect.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace spcagan;
using namespace spcagan::detect;

namespace {

using Confusion = std::vector<std::vector<std::size_t>>;

Confusion random_confusion(std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> cell(0, 30);
  Confusion c(k, std::vector<std::size_t>(k));
  for (auto& row : c) {
    for (auto& v : row) v = cell(rng);
  }
  c[0][0] += 1;  // never empty
  return c;
}

// Expands a confusion matrix into (truth, predicted) label pairs.
std::pair<Labels, Labels> expand(const Confusion& c) {
  Labels t, p;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      for (std::size_t n = 0; n < c[i][j]; ++n) {
        t.push_back(static_cast<int>(i));
        p.push_back(static_cast<int>(j));
      }
    }
  }
  return {t, p};
}

struct Oracle {
  double p = 0, r = 0, f = 0, kappa = 0, mcc = 0;
};

// Label-level formulas: per-class counting, pairwise chance agreement, and
// the one-hot covariance form of the multiclass correlation coefficient.
Oracle brute(const Labels& t, const Labels& p, int k) {
  const auto n = static_cast<double>(t.size());
  Oracle o;
  int supported = 0;
  for (int c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += t[i] == c && p[i] == c;
      fp += t[i] != c && p[i] == c;
      fn += t[i] == c && p[i] != c;
    }
    if (tp + fn == 0) continue;
    ++supported;
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp / (tp + fn);
    o.p += prec;
    o.r += rec;
    o.f += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  o.p /= supported;
  o.r /= supported;
  o.f /= supported;

  double agree = 0, chance = 0;
  for (std::size_t i = 0; i < t.size(); ++i) agree += t[i] == p[i];
  for (int c = 0; c < k; ++c) {
    double a = 0, b = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      a += t[i] == c;
      b += p[i] == c;
    }
    chance += (a / n) * (b / n);
  }
  o.kappa = (agree / n - chance) / (1 - chance);

  auto cov = [&](const Labels& x, const Labels& y) {
    double s = 0;
    for (int c = 0; c < k; ++c) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] == c;
        my += y[i] == c;
      }
      mx /= n;
      my /= n;
      for (std::size_t i = 0; i < x.size(); ++i) s += ((x[i] == c) - mx) * ((y[i] == c) - my);
    }
    return s;
  };
  const double d = std::sqrt(cov(t, t) * cov(p, p));
  o.mcc = d > 0 ? cov(t, p) / d : 0.0;
  return o;
}

features::FeatureMatrix separable(std::size_t per_class, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  features::FeatureMatrix fm;
  fm.values = testing::gaussian(static_cast<Eigen::Index>(3 * per_class), static_cast<Eigen::Index>(f), rng, 0.4);
  for (std::size_t i = 0; i < 3 * per_class; ++i) {
    const int c = static_cast<int>(i / per_class);
    fm.labels.push_back(c);
    fm.values(static_cast<Eigen::Index>(i), c) += 3.0;
  }
  for (std::size_t j = 0; j < f; ++j) fm.feature_names.push_back("f" + std::to_string(j));
  return fm;
}

DetectorConfig config(Kind kind, std::size_t f) {
  DetectorConfig c;
  c.kind = kind;
  c.n_classes = 3;
  c.feature_dim = f;
  c.hidden = {16, 8};
  c.epochs = 25;
  c.mc_samples = 10;
  c.batch_size = 16;
  c.lr = 5e-3;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("detect") {
  TEST_CASE("metrics agree with label-level oracles") {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
      const auto k = 2 + static_cast<std::size_t>(t % 4);
      const auto c = random_confusion(k, rng);
      const auto [truth, pred] = expand(c);
      const auto r = evaluate(pred, truth, k);
      const auto o = brute(truth, pred, static_cast<int>(k));
      CHECK(r.confusion == c);
      CHECK(std::abs(r.precision - o.p) < 1e-12);
      CHECK(std::abs(r.recall - o.r) < 1e-12);
      CHECK(std::abs(r.f1 - o.f) < 1e-12);
      CHECK(std::abs(r.kappa - o.kappa) < 1e-12);
      CHECK(std::abs(r.mcc - o.mcc) < 1e-12);
      CHECK(r.kappa <= 1.0);
      CHECK(r.mcc >= -1.0);
      CHECK(r.mcc <= 1.0);
    }
  }

  TEST_CASE("mcc is symmetric under a class relabelling") {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
      const auto k = 2 + static_cast<std::size_t>(t % 4);
      auto c = random_confusion(k, rng);
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Confusion s(k, std::vector<std::size_t>(k));
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) s[perm[i]][perm[j]] = c[i][j];
      }
      CHECK(report_from_confusion(s).mcc == report_from_confusion(c).mcc);
    }
  }

  TEST_CASE("constant predictions on balanced binary truth have zero kappa") {
    const Labels truth{0, 1, 0, 1, 0, 1};
    const auto r = evaluate(Labels(6, 1), truth, 2);
    CHECK(r.kappa == 0.0);
    CHECK(r.mcc == 0.0);
    CHECK(evaluate(truth, truth, 2).kappa == 1.0);
    CHECK_THROWS_AS(evaluate(Labels{}, Labels{}, 2), Error);
  }

  TEST_CASE("argmax breaks ties toward the lower index") {
    Matrix p(2, 3);
    p << 0.4, 0.4, 0.2, 0.1, 0.3, 0.3;
    CHECK(argmax(p) == Labels{0, 1});
  }

  TEST_CASE("every detector kind learns a separable problem") {
    const auto train = separable(40, 6, 4);
    const auto test = separable(20, 6, 5);
    for (auto kind : {Kind::MLP, Kind::CNN1D, Kind::BNN, Kind::ENSEMBLE, Kind::HYBRID}) {
      CAPTURE(to_string(kind));
      auto det = Detector::build(config(kind, 6));
      det.fit(train);
      CHECK(det.loss_history().size() == 25);
      CHECK(det.loss_history().back() < det.loss_history().front());
      const auto pred = det.predict(test.values);
      CHECK(pred.class_probs.rowwise().sum().isOnes(1e-9));
      CHECK(evaluate(pred, test.labels).f1 > 0.9);
      CHECK((pred.uncertainty.array() >= 0).all());
      if (!det.stochastic()) CHECK(pred.uncertainty.isZero());
      CHECK(det.predict(test.values).class_probs == pred.class_probs);
      if (kind == Kind::BNN || kind == Kind::HYBRID) CHECK(det.kl_history().size() == 25);
    }
  }

  TEST_CASE("input gradients match finite differences") {
    const auto train = separable(20, 6, 6);
    for (auto kind : {Kind::MLP, Kind::CNN1D, Kind::ENSEMBLE, Kind::HYBRID}) {
      CAPTURE(to_string(kind));
      auto det = Detector::build(config(kind, 6));
      det.fit(train);
      Rng rng(7);
      Matrix x = testing::gaussian(3, 6, rng);
      const Matrix up = testing::gaussian(3, 3, rng);
      const Matrix g = det.input_vjp(x, up);
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x(i);
        x(i) = v + h;
        const double a = det.log_probs(x).cwiseProduct(up).sum();
        x(i) = v - h;
        const double b = det.log_probs(x).cwiseProduct(up).sum();
        x(i) = v;
        CHECK(g(i) == doctest::Approx((a - b) / (2 * h)).epsilon(1e-4).scale(1e-6));
      }
    }
  }

  TEST_CASE("checkpoints restore identical predictions") {
    const auto train = separable(20, 5, 8);
    for (auto kind : {Kind::CNN1D, Kind::HYBRID}) {
      auto det = Detector::build(config(kind, 5));
      det.fit(train);
      const auto dir = testing::scratch_dir("detect_ckpt");
      det.save(dir / "d.ckpt");
      const auto back = Detector::load(dir / "d.ckpt");
      CHECK(back.config().to_json() == det.config().to_json());
      CHECK(back.predict(train.values).class_probs == det.predict(train.values).class_probs);
    }
  }

  TEST_CASE("configuration errors") {
    auto c = config(Kind::CNN1D, kMinCnnFeatures - 1);
    CHECK_THROWS_AS(Detector::build(c), Error);
    auto det = Detector::build(config(Kind::MLP, 6));
    CHECK_THROWS_AS(det.predict(Matrix::Zero(2, 5)), Error);
    CHECK(parse_kind("HYBRID") == Kind::HYBRID);
    CHECK_FALSE(parse_kind("SVM").has_value());
    CHECK(DetectorConfig::from_json(config(Kind::BNN, 6).to_json()).kind == Kind::BNN);
  }
}
