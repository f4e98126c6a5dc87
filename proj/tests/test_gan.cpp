#include "spcagan/gan.hpp"
#include "spcagan/linmetrics.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace spcagan;
using namespace spcagan::gan;

namespace {

struct Blobs {
  Matrix x;
  Labels y;
};

// Two classes on a line in 4-D: class 0 at the origin, class 1 at +3.
Blobs blobs(std::size_t n0, std::size_t n1, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  b.x = testing::gaussian(static_cast<Eigen::Index>(n0 + n1), 4, rng, 0.5);
  for (std::size_t i = 0; i < n0 + n1; ++i) {
    const int c = i < n0 ? 0 : 1;
    b.y.push_back(c);
    b.x(static_cast<Eigen::Index>(i), 0) += 3.0 * c;
    b.x(static_cast<Eigen::Index>(i), 1) += 1.5 * c;
  }
  return b;
}

GanConfig small_config(Mode mode, std::uint64_t seed) {
  GanConfig c;
  c.mode = mode;
  c.latent_dim = 6;
  c.n_classes = 2;
  c.feature_dim = 4;
  c.gen_hidden = {16, 16};
  c.batch_size = 16;
  c.max_epochs = 2;
  c.trace_samples = 64;
  c.seed = seed;
  return c;
}

bool same_params(const nn::Sequential& a, const nn::Sequential& b) {
  const auto pa = a.params();
  const auto pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value != pb[i]->value) return false;
  }
  return true;
}

bool same_model(const GanModel& a, const GanModel& b) {
  return same_params(a.generator, b.generator) && same_params(a.discriminator.trunk, b.discriminator.trunk) &&
         same_params(a.discriminator.source_head, b.discriminator.source_head) &&
         same_params(a.discriminator.class_head, b.discriminator.class_head);
}

}  // namespace

TEST_SUITE("gan") {
  TEST_CASE("regularizer gradient matches central differences") {
    Rng rng(21);
    for (int t = 0; t < 5; ++t) {
      const Matrix real = testing::gaussian(32, 6, rng) * testing::gaussian(6, 6, rng);
      Matrix fake = testing::gaussian(32, 6, rng) * testing::gaussian(6, 6, rng);
      const auto term = spca_regularizer(real, fake, 2);
      REQUIRE_FALSE(term.skipped);
      CHECK(term.value == doctest::Approx(2.0 - linmetrics::spca(real, fake, 2)).epsilon(1e-10));
      const double h = 1e-6;
      double num = 0, den = 0;
      for (Eigen::Index i = 0; i < fake.size(); ++i) {
        const double v = fake(i);
        fake(i) = v + h;
        const double up = spca_regularizer(real, fake, 2, false).value;
        fake(i) = v - h;
        const double down = spca_regularizer(real, fake, 2, false).value;
        fake(i) = v;
        const double fd = (up - down) / (2 * h);
        num += (term.grad(i) - fd) * (term.grad(i) - fd);
        den += fd * fd;
      }
      CHECK(std::sqrt(num / den) < 1e-3);
    }
  }

  TEST_CASE("regularizer skips degenerate batches") {
    Matrix flat = Matrix::Zero(10, 3);
    flat.col(0) = Vector::LinSpaced(10, 0, 1);
    Rng rng(2);
    const auto t = spca_regularizer(testing::gaussian(10, 3, rng), flat, 2);
    CHECK(t.skipped);
    CHECK(t.grad.isZero());
    CHECK_THROWS_AS(spca_regularizer(flat, flat, 4), Error);
  }

  TEST_CASE("gradient penalty parameter gradient matches central differences") {
    Rng rng(3);
    auto critic = nn::mlp(3 + 2, {5, 4}, 1, 0.2, rng);
    const Matrix xi = testing::gaussian(6, 3, rng);
    const Matrix cond = one_hot({0, 1, 1, 0, 1, 0}, 2);
    auto grads = critic.zero_grads();
    const double gp = gradient_penalty_at(critic, xi, cond, &grads);
    CHECK(gp >= 0);
    const double h = 1e-6;
    auto params = critic.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (Eigen::Index i = 0; i < params[p]->value.size(); ++i) {
        double& v = params[p]->value(i);
        const double old = v;
        v = old + h;
        const double up = gradient_penalty_at(critic, xi, cond);
        v = old - h;
        const double down = gradient_penalty_at(critic, xi, cond);
        v = old;
        CHECK(grads[p](i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1e-6));
      }
    }
  }

  TEST_CASE("gradient penalty of a linear critic is closed form") {
    Rng rng(4);
    nn::Sequential critic(3);
    auto& d = critic.add<nn::Dense>(3, 1, rng);
    d.weight() << 0.6, 0.8, 2.0;  // last input is the condition
    const Matrix xi = testing::gaussian(5, 2, rng);
    const double gp = gradient_penalty_at(critic, xi, Matrix::Ones(5, 1));
    CHECK(gp == doctest::Approx(0.0).scale(1e-12));
    d.weight() << 3.0, 4.0, 0.0;
    CHECK(gradient_penalty_at(critic, xi, Matrix::Zero(5, 1)) == doctest::Approx(16.0));
  }

  TEST_CASE("loss terms as written") {
    Vector r(2), f(2);
    r << 0.9, 0.5;
    f << 0.2, 1.0;
    CHECK(source_loss(r, f) == doctest::Approx(0.5 * (std::log(0.9) + std::log(0.5)) +
                                               0.5 * (std::log(0.8) + std::log(1e-7))));
    Matrix pr(2, 2), pf(1, 2);
    pr << 0.7, 0.3, 0.4, 0.6;
    pf << 0.1, 0.9;
    CHECK(class_loss(pr, {0, 1}, pf, {1}) == doctest::Approx(0.5 * (std::log(0.7) + std::log(0.6)) + std::log(0.9)));
    CHECK_THROWS_AS(class_loss(pr, {0, 2}, pf, {1}), Error);
  }

  TEST_CASE("SPCAGAN without the regularizer is ACGAN step for step") {
    const auto b = blobs(40, 24, 5);
    auto spca_cfg = small_config(Mode::SPCAGAN, 9);
    spca_cfg.spca_weight = 0.0;
    GanTrainer s(b.x, b.y, spca_cfg);
    GanTrainer a(b.x, b.y, small_config(Mode::ACGAN, 9));
    for (int step = 0; step < 10; ++step) {
      CAPTURE(step);
      const auto ls = s.step();
      const auto la = a.step();
      CHECK(ls.total_d == la.total_d);
      CHECK(same_model(s.model(), a.model()));
    }
    auto weighted = small_config(Mode::SPCAGAN, 9);
    GanTrainer w(b.x, b.y, weighted);
    for (int step = 0; step < 3; ++step) w.step();
    GanTrainer a2(b.x, b.y, small_config(Mode::ACGAN, 9));
    for (int step = 0; step < 3; ++step) a2.step();
    CHECK_FALSE(same_params(w.model().generator, a2.model().generator));
  }

  TEST_CASE("zero epochs returns the initial model") {
    const auto b = blobs(30, 20, 6);
    for (auto mode : {Mode::CGAN, Mode::ACGAN, Mode::CWGANGP, Mode::SPCAGAN}) {
      CAPTURE(to_string(mode));
      auto cfg = small_config(mode, 4);
      cfg.max_epochs = 0;
      const auto m = train(b.x, b.y, cfg);
      CHECK(m.history.empty());
      CHECK(same_model(m, GanModel::init(cfg)));
    }
  }

  TEST_CASE("every mode trains deterministically and records its history") {
    const auto b = blobs(40, 24, 7);
    for (auto mode : {Mode::CGAN, Mode::ACGAN, Mode::CWGANGP, Mode::SPCAGAN}) {
      CAPTURE(to_string(mode));
      const auto cfg = small_config(mode, 8);
      const auto m1 = train(b.x, b.y, cfg);
      const auto m2 = train(b.x, b.y, cfg);
      CHECK(same_model(m1, m2));
      REQUIRE(m1.history.size() == cfg.max_epochs);
      CHECK(m1.history.back().epoch == cfg.max_epochs);
      const Matrix s = m1.sample(1, 10, 3);
      CHECK(s.rows() == 10);
      CHECK(s.cols() == 4);
      CHECK(s.allFinite());
      CHECK(s == m1.sample(1, 10, 3));
      const Vector p = m1.source_prob(b.x, b.y);
      CHECK(p.allFinite());
      if (mode != Mode::CWGANGP) {
        CHECK((p.array() >= 0).all());
        CHECK((p.array() <= 1).all());
      }
      const bool has_class_head = mode == Mode::ACGAN || mode == Mode::SPCAGAN;
      CHECK((m1.class_prob(b.x).size() > 0) == has_class_head);
    }
  }

  TEST_CASE("checkpoints round-trip") {
    const auto b = blobs(30, 20, 8);
    const auto m = train(b.x, b.y, small_config(Mode::SPCAGAN, 2));
    const auto dir = testing::scratch_dir("gan_ckpt");
    m.save(dir / "g.ckpt");
    const auto back = GanModel::load(dir / "g.ckpt");
    CHECK(same_model(m, back));
    CHECK(back.history.size() == m.history.size());
    CHECK(back.config.to_json() == m.config.to_json());
    CHECK(back.sample(0, 5, 1) == m.sample(0, 5, 1));
  }

  TEST_CASE("config validation and JSON") {
    auto cfg = small_config(Mode::CWGANGP, 1);
    cfg.disc_hidden = {8};
    const auto back = GanConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.mode == Mode::CWGANGP);
    CHECK(GanConfig::from_json(small_config(Mode::ACGAN, 1).to_json()).effective_disc_hidden() ==
          std::vector<std::size_t>{16, 16});
    cfg.spca_k = 5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK_FALSE(parse_mode("WGAN").has_value());
  }
}
