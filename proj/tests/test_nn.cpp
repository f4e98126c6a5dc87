#include "spcagan/nn.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace spcagan;
using namespace spcagan::nn;

namespace {

// loss = sum(weights .* net(x)); the rng is reseeded for every evaluation so
// stochastic passes see the same noise.
double probe_loss(const Sequential& net, const Matrix& x, const Matrix& weights, Pass pass, std::uint64_t seed) {
  Rng rng(seed);
  Tape tape;
  return net.forward(x, tape, pass, &rng).cwiseProduct(weights).sum();
}

// Worst relative error between analytic and central-difference gradients,
// over the input and every parameter entry.
double gradient_error(Sequential net, const Matrix& x, Pass pass, std::uint64_t seed) {
  Rng wrng(seed + 1);
  Rng rng(seed);
  Tape tape;
  const Matrix y = net.forward(x, tape, pass, &rng);
  const Matrix weights = testing::gaussian(y.rows(), y.cols(), wrng);
  auto grads = net.zero_grads();
  const Matrix dx = net.backward(weights, tape, grads);

  const double h = 1e-6;
  double worst = 0;
  auto compare = [&](double analytic, double numeric) {
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-4, std::abs(analytic) + std::abs(numeric)));
  };
  Matrix xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = xp(i);
    xp(i) = v + h;
    const double up = probe_loss(net, xp, weights, pass, seed);
    xp(i) = v - h;
    const double down = probe_loss(net, xp, weights, pass, seed);
    xp(i) = v;
    compare(dx(i), (up - down) / (2 * h));
  }
  auto params = net.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = params[p]->value;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double v = m(i);
      m(i) = v + h;
      const double up = probe_loss(net, x, weights, pass, seed);
      m(i) = v - h;
      const double down = probe_loss(net, x, weights, pass, seed);
      m(i) = v;
      compare(grads[p](i), (up - down) / (2 * h));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("dense and leaky relu gradients") {
    Rng rng(1);
    auto net = mlp(5, {7, 4}, 3, 0.2, rng);
    CHECK(gradient_error(net, testing::gaussian(6, 5, rng), Pass::Eval, 3) < 1e-5);
  }

  TEST_CASE("conv and pooling gradients") {
    Rng rng(2);
    Sequential net(8 * 2);
    net.add<Conv1D>(8, 2, 3, rng);
    net.add<LeakyReLU>(8 * 3, 0.1);
    net.add<MaxPool1D>(8, 3);
    net.add<Dense>(4 * 3, 2, rng);
    CHECK(net.out_dim() == 2);
    CHECK(gradient_error(net, testing::gaussian(4, 16, rng), Pass::Eval, 4) < 1e-5);
  }

  TEST_CASE("dropout gradients under a fixed mask") {
    Rng rng(3);
    Sequential net(4);
    net.add<Dense>(4, 6, rng);
    net.add<Dropout>(6, 0.4);
    net.add<Dense>(6, 2, rng);
    CHECK(gradient_error(net, testing::gaussian(5, 4, rng), Pass::Train, 5) < 1e-5);
    CHECK(gradient_error(net, testing::gaussian(5, 4, rng), Pass::MonteCarlo, 6) < 1e-5);
  }

  TEST_CASE("bayesian dense gradients through the reparameterization") {
    Rng rng(4);
    Sequential net(3);
    auto& b = net.add<BayesDense>(3, 4, rng, -1.0);
    net.add<LeakyReLU>(4, 0.2);
    net.add<BayesDense>(4, 2, rng, -2.0);
    CHECK(gradient_error(net, testing::gaussian(5, 3, rng), Pass::Train, 7) < 1e-5);
    CHECK(gradient_error(net, testing::gaussian(5, 3, rng), Pass::Eval, 8) < 1e-5);
    b.sample_at_predict = true;
    CHECK(gradient_error(net, testing::gaussian(5, 3, rng), Pass::MonteCarlo, 9) < 1e-5);
  }

  TEST_CASE("kl gradient matches finite differences") {
    Rng rng(5);
    Sequential net(3);
    net.add<BayesDense>(3, 2, rng, -0.5);
    auto grads = net.zero_grads();
    net.add_kl_grad(grads, 1.0);
    auto params = net.params();
    const double h = 1e-6;
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (Eigen::Index i = 0; i < params[p]->value.size(); ++i) {
        double& v = params[p]->value(i);
        const double old = v;
        v = old + h;
        const double up = net.kl();
        v = old - h;
        const double down = net.kl();
        v = old;
        CHECK(grads[p](i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
      }
    }
    CHECK(net.kl() >= 0);
  }

  TEST_CASE("monte carlo dropout shares one mask across rows") {
    Sequential net(10);
    net.add<Dropout>(10, 0.5);
    Rng rng(6);
    const Matrix ones = Matrix::Ones(8, 10);
    const Matrix mc = net.predict(ones, Pass::MonteCarlo, &rng);
    for (Eigen::Index i = 1; i < mc.rows(); ++i) CHECK(mc.row(i) == mc.row(0));
    const Matrix tr = net.predict(ones, Pass::Train, &rng);
    bool differs = false;
    for (Eigen::Index i = 1; i < tr.rows(); ++i) differs |= tr.row(i) != tr.row(0);
    CHECK(differs);
    CHECK(net.predict(ones) == ones);
  }

  TEST_CASE("bayesian layers use the posterior mean unless sampling") {
    Rng rng(7);
    Sequential net(3);
    auto& b = net.add<BayesDense>(3, 2, rng, 0.0);
    const Matrix x = testing::gaussian(4, 3, rng);
    Rng r1(1), r2(2);
    CHECK(net.predict(x, Pass::MonteCarlo, &r1) == net.predict(x));
    b.sample_at_predict = true;
    CHECK(net.predict(x, Pass::MonteCarlo, &r1) != net.predict(x, Pass::MonteCarlo, &r2));
  }

  TEST_CASE("copies are deep") {
    Rng rng(8);
    auto a = mlp(2, {3}, 1, 0.2, rng);
    Sequential b = a;
    b.params()[0]->value.setZero();
    CHECK_FALSE(a.params()[0]->value.isZero());
    CHECK(a.param_names() == std::vector<std::string>{"0.dense.W", "0.dense.b", "2.dense.W", "2.dense.b"});
    CHECK(a.param_count() == 2 * 3 + 3 + 3 + 1);
  }

  TEST_CASE("softmax family is stable") {
    Matrix logits(2, 3);
    logits << 1000, 1001, 999, -1000, -1000, -1000;
    const Matrix p = softmax(logits);
    CHECK(p.allFinite());
    CHECK(p.rowwise().sum().isOnes(1e-12));
    CHECK(log_softmax(logits).array().exp().matrix().isApprox(p));
    Matrix big(1, 2);
    big << -800, 800;
    const Matrix ls = log_sigmoid(big);
    CHECK(ls(0, 0) == doctest::Approx(-800));
    CHECK(ls(0, 1) == doctest::Approx(0.0));
    CHECK(sigmoid(big)(0, 1) == 1.0);
  }

  TEST_CASE("cross-entropy gradient") {
    Rng rng(9);
    Matrix logits = testing::gaussian(5, 3, rng);
    const Labels y{0, 2, 1, 1, 0};
    Matrix g;
    cross_entropy(logits, y, &g);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double v = logits(i);
      logits(i) = v + h;
      const double up = cross_entropy(logits, y, nullptr);
      logits(i) = v - h;
      const double down = cross_entropy(logits, y, nullptr);
      logits(i) = v;
      CHECK(g(i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    }
  }

  TEST_CASE("adam first step moves each weight by lr against its gradient sign") {
    Param p{"w", Matrix::Zero(1, 3)};
    Matrix g(1, 3);
    g << 2.0, -0.5, 0.0;
    Adam opt(0.01);
    opt.step({&p}, {g});
    CHECK(p.value(0, 0) == doctest::Approx(-0.01));
    CHECK(p.value(0, 1) == doctest::Approx(0.01));
    CHECK(p.value(0, 2) == 0.0);
    CHECK(opt.steps() == 1);
  }
}
