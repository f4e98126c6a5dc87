#include "spcagan/nn.hpp"

#include <cmath>

namespace spcagan::nn {

namespace {

Matrix glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  }
  return w;
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

Rng& require(Rng* rng, const char* who) {
  if (!rng) throw Error(ErrorKind::Spec, std::string(who) + ": stochastic pass needs a random generator");
  return *rng;
}

void check_cols(const Matrix& x, std::size_t expected, const char* who) {
  if (static_cast<std::size_t>(x.cols()) != expected) {
    throw Error(ErrorKind::Range, std::string(who) + ": expected " + std::to_string(expected) + " input columns, got " +
                                      std::to_string(x.cols()));
  }
}

}  // namespace

// Dense -----------------------------------------------------------------

Dense::Dense(std::size_t in, std::size_t out, Rng& rng) {
  w_.value = glorot(in, out, rng);
  b_.value = Matrix::Zero(1, static_cast<Eigen::Index>(out));
}

Matrix Dense::forward(const Matrix& x, Cache& cache, Pass, Rng*) const {
  check_cols(x, static_cast<std::size_t>(w_.value.rows()), "dense");
  cache.a = x;
  Matrix y = x * w_.value;
  y.rowwise() += b_.value.row(0);
  return y;
}

Matrix Dense::backward(const Matrix& dy, const Cache& cache, Matrix* grads) const {
  grads[0].noalias() += cache.a.transpose() * dy;
  grads[1] += dy.colwise().sum();
  return dy * w_.value.transpose();
}

// LeakyReLU -------------------------------------------------------------

Matrix LeakyReLU::forward(const Matrix& x, Cache& cache, Pass, Rng*) const {
  cache.a = x;
  return x.unaryExpr([s = slope_](double v) { return v > 0.0 ? v : s * v; });
}

Matrix LeakyReLU::backward(const Matrix& dy, const Cache& cache, Matrix*) const {
  return dy.binaryExpr(cache.a, [s = slope_](double g, double v) { return v > 0.0 ? g : s * g; });
}

// Dropout ---------------------------------------------------------------

Dropout::Dropout(std::size_t dim, double rate) : dim_(dim), rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorKind::Spec, "dropout rate must lie in [0, 1)");
}

Matrix Dropout::forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const {
  if (pass == Pass::Eval || rate_ == 0.0) {
    cache.a.resize(0, 0);
    return x;
  }
  auto& r = require(rng, "dropout");
  std::bernoulli_distribution keep(1.0 - rate_);
  const double scale = 1.0 / (1.0 - rate_);
  if (pass == Pass::Train) {
    cache.a.resize(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) cache.a(i, j) = keep(r) ? scale : 0.0;
    }
  } else {
    RowVector m(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) m(j) = keep(r) ? scale : 0.0;
    cache.a = m.replicate(x.rows(), 1);
  }
  return x.cwiseProduct(cache.a);
}

Matrix Dropout::backward(const Matrix& dy, const Cache& cache, Matrix*) const {
  return cache.a.size() == 0 ? dy : Matrix(dy.cwiseProduct(cache.a));
}

// Conv1D ----------------------------------------------------------------

Conv1D::Conv1D(std::size_t length, std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : length_(length), in_ch_(in_channels), out_ch_(out_channels) {
  if (length == 0 || in_channels == 0 || out_channels == 0) throw Error(ErrorKind::Spec, "conv1d: zero dimension");
  w_.value = glorot(kKernel * in_channels, out_channels, rng);
  b_.value = Matrix::Zero(1, static_cast<Eigen::Index>(out_channels));
}

Matrix Conv1D::im2col(const Matrix& x) const {
  const auto n = x.rows();
  const auto L = static_cast<Eigen::Index>(length_), C = static_cast<Eigen::Index>(in_ch_);
  Matrix cols = Matrix::Zero(n * L, static_cast<Eigen::Index>(kKernel) * C);
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(kKernel); ++t) {
    for (Eigen::Index p = 0; p < L; ++p) {
      const Eigen::Index src = p + t - 1;
      if (src < 0 || src >= L) continue;
      for (Eigen::Index c = 0; c < C; ++c) {
        for (Eigen::Index s = 0; s < n; ++s) cols(s * L + p, t * C + c) = x(s, src * C + c);
      }
    }
  }
  return cols;
}

Matrix Conv1D::forward(const Matrix& x, Cache& cache, Pass, Rng*) const {
  check_cols(x, length_ * in_ch_, "conv1d");
  cache.a = im2col(x);
  Matrix y = cache.a * w_.value;
  y.rowwise() += b_.value.row(0);
  const auto n = x.rows();
  const auto L = static_cast<Eigen::Index>(length_), O = static_cast<Eigen::Index>(out_ch_);
  Matrix out(n, L * O);
  for (Eigen::Index o = 0; o < O; ++o) {
    for (Eigen::Index p = 0; p < L; ++p) {
      for (Eigen::Index s = 0; s < n; ++s) out(s, p * O + o) = y(s * L + p, o);
    }
  }
  return out;
}

Matrix Conv1D::backward(const Matrix& dy, const Cache& cache, Matrix* grads) const {
  const auto n = dy.rows();
  const auto L = static_cast<Eigen::Index>(length_), O = static_cast<Eigen::Index>(out_ch_),
             C = static_cast<Eigen::Index>(in_ch_);
  Matrix dY(n * L, O);
  for (Eigen::Index o = 0; o < O; ++o) {
    for (Eigen::Index p = 0; p < L; ++p) {
      for (Eigen::Index s = 0; s < n; ++s) dY(s * L + p, o) = dy(s, p * O + o);
    }
  }
  grads[0].noalias() += cache.a.transpose() * dY;
  grads[1] += dY.colwise().sum();
  const Matrix dcols = dY * w_.value.transpose();
  Matrix dx = Matrix::Zero(n, L * C);
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(kKernel); ++t) {
    for (Eigen::Index p = 0; p < L; ++p) {
      const Eigen::Index src = p + t - 1;
      if (src < 0 || src >= L) continue;
      for (Eigen::Index c = 0; c < C; ++c) {
        for (Eigen::Index s = 0; s < n; ++s) dx(s, src * C + c) += dcols(s * L + p, t * C + c);
      }
    }
  }
  return dx;
}

// MaxPool1D -------------------------------------------------------------

Matrix MaxPool1D::forward(const Matrix& x, Cache& cache, Pass, Rng*) const {
  check_cols(x, length_ * ch_, "maxpool1d");
  const auto n = x.rows();
  const auto C = static_cast<Eigen::Index>(ch_);
  const auto out_cols = static_cast<Eigen::Index>(out_dim());
  Matrix y(n, out_cols);
  cache.idx.assign(static_cast<std::size_t>(n * out_cols), 0);
  for (Eigen::Index j = 0; j < out_cols; ++j) {
    const Eigen::Index q = j / C, c = j % C;
    const Eigen::Index i0 = (2 * q) * C + c, i1 = (2 * q + 1) * C + c;
    for (Eigen::Index s = 0; s < n; ++s) {
      const bool first = x(s, i0) >= x(s, i1);
      y(s, j) = first ? x(s, i0) : x(s, i1);
      cache.idx[static_cast<std::size_t>(j * n + s)] = first ? i0 : i1;
    }
  }
  cache.a.resize(n, 0);
  return y;
}

Matrix MaxPool1D::backward(const Matrix& dy, const Cache& cache, Matrix*) const {
  const auto n = dy.rows();
  Matrix dx = Matrix::Zero(n, static_cast<Eigen::Index>(length_ * ch_));
  for (Eigen::Index j = 0; j < dy.cols(); ++j) {
    for (Eigen::Index s = 0; s < n; ++s) dx(s, cache.idx[static_cast<std::size_t>(j * n + s)]) += dy(s, j);
  }
  return dx;
}

// BayesDense ------------------------------------------------------------

BayesDense::BayesDense(std::size_t in, std::size_t out, Rng& rng, double init_logvar) {
  w_mu_.value = glorot(in, out, rng);
  w_logvar_.value = Matrix::Constant(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out), init_logvar);
  b_mu_.value = Matrix::Zero(1, static_cast<Eigen::Index>(out));
  b_logvar_.value = Matrix::Constant(1, static_cast<Eigen::Index>(out), init_logvar);
}

Matrix BayesDense::forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const {
  check_cols(x, static_cast<std::size_t>(w_mu_.value.rows()), "bayes_dense");
  cache.a = x;
  Matrix w = w_mu_.value;
  RowVector b = b_mu_.value.row(0);
  if (pass == Pass::Train || (sample_at_predict && pass == Pass::MonteCarlo)) {
    auto& r = require(rng, "bayes_dense");
    cache.b = standard_normal(w.rows(), w.cols(), r);
    cache.c = standard_normal(1, w.cols(), r);
    w.array() += (0.5 * w_logvar_.value.array()).exp() * cache.b.array();
    b.array() += (0.5 * b_logvar_.value.row(0).array()).exp() * cache.c.row(0).array();
  } else {
    cache.b.resize(0, 0);
    cache.c.resize(0, 0);
  }
  Matrix y = x * w;
  y.rowwise() += b;
  return y;
}

Matrix BayesDense::backward(const Matrix& dy, const Cache& cache, Matrix* grads) const {
  const Matrix dw = cache.a.transpose() * dy;
  const RowVector db = dy.colwise().sum();
  grads[0] += dw;
  grads[2] += db;
  Matrix w = w_mu_.value;
  if (cache.b.size() != 0) {
    const Matrix sw = (0.5 * w_logvar_.value.array()).exp().matrix();
    const Matrix sb = (0.5 * b_logvar_.value.array()).exp().matrix();
    grads[1].array() += dw.array() * cache.b.array() * 0.5 * sw.array();
    grads[3].array() += db.array() * cache.c.row(0).array() * 0.5 * sb.row(0).array();
    w.array() += sw.array() * cache.b.array();
  }
  return dy * w.transpose();
}

double BayesDense::kl() const {
  auto term = [](const Matrix& mu, const Matrix& lv) {
    return 0.5 * (lv.array().exp() + mu.array().square() - 1.0 - lv.array()).sum();
  };
  return term(w_mu_.value, w_logvar_.value) + term(b_mu_.value, b_logvar_.value);
}

void BayesDense::add_kl_grad(Matrix* grads, double scale) const {
  grads[0] += scale * w_mu_.value;
  grads[1].array() += scale * 0.5 * (w_logvar_.value.array().exp() - 1.0);
  grads[2] += scale * b_mu_.value;
  grads[3].array() += scale * 0.5 * (b_logvar_.value.array().exp() - 1.0);
}

// Sequential ------------------------------------------------------------

Sequential::Sequential(const Sequential& other) : in_dim_(other.in_dim_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Matrix Sequential::forward(const Matrix& x, Tape& tape, Pass pass, Rng* rng) const {
  tape.caches.resize(layers_.size());
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, tape.caches[i], pass, rng);
  return h;
}

Matrix Sequential::predict(const Matrix& x, Pass pass, Rng* rng) const {
  Tape t;
  return forward(x, t, pass, rng);
}

Matrix Sequential::backward(const Matrix& dy, const Tape& tape, std::vector<Matrix>& grads) const {
  // Offsets of each layer's parameters in the flat gradient list.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) offset[i + 1] = offset[i] + layers_[i]->params().size();
  Matrix g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g, tape.caches[i], grads.data() + offset[i]);
  }
  return g;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (auto* p : l->params()) out.push_back(p);
  }
  return out;
}

std::vector<const Param*> Sequential::params() const {
  std::vector<const Param*> out;
  for (const auto& l : layers_) {
    for (auto* p : l->params()) out.push_back(p);
  }
  return out;
}

std::vector<std::string> Sequential::param_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto* p : layers_[i]->params()) out.push_back(std::to_string(i) + "." + layers_[i]->kind() + "." + p->name);
  }
  return out;
}

std::vector<Matrix> Sequential::zero_grads() const {
  std::vector<Matrix> out;
  for (const auto* p : params()) out.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  return out;
}

std::size_t Sequential::param_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

double Sequential::kl() const {
  double s = 0.0;
  for (const auto& l : layers_) s += l->kl();
  return s;
}

void Sequential::add_kl_grad(std::vector<Matrix>& grads, double scale) const {
  std::size_t off = 0;
  for (const auto& l : layers_) {
    l->add_kl_grad(grads.data() + off, scale);
    off += l->params().size();
  }
}

Sequential mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, double slope, Rng& rng) {
  Sequential net(in);
  std::size_t prev = in;
  for (auto h : hidden) {
    net.add<Dense>(prev, h, rng);
    net.add<LeakyReLU>(h, slope);
    prev = h;
  }
  net.add<Dense>(prev, out, rng);
  return net;
}

// Adam ------------------------------------------------------------------

void Adam::step(const std::vector<Param*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw Error(ErrorKind::Spec, "adam: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i].cwiseAbs2();
    params[i]->value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// Numerics --------------------------------------------------------------

Matrix log_softmax(const Matrix& logits) {
  const Vector mx = logits.rowwise().maxCoeff();
  Matrix shifted = logits.colwise() - mx;
  const Vector lse = shifted.array().exp().rowwise().sum().log();
  shifted.colwise() -= lse;
  return shifted;
}

Matrix softmax(const Matrix& logits) { return log_softmax(logits).array().exp(); }

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix log_sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) { return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); });
}

double cross_entropy(const Matrix& logits, const Labels& labels, Matrix* dlogits) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw Error(ErrorKind::Range, "cross_entropy: logits and labels differ in length");
  }
  const Matrix lp = log_softmax(logits);
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw Error(ErrorKind::Range, "cross_entropy: label out of range");
    loss -= lp(static_cast<Eigen::Index>(i), y);
  }
  if (dlogits) {
    *dlogits = lp.array().exp();
    for (std::size_t i = 0; i < labels.size(); ++i) (*dlogits)(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
    *dlogits /= n;
  }
  return loss / n;
}

}  // namespace spcagan::nn
