#include "spcagan/gan.hpp"

#include "spcagan/csv.hpp"
#include "spcagan/linmetrics.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

namespace spcagan::gan {

using nlohmann::json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::CGAN: return "CGAN";
    case Mode::ACGAN: return "ACGAN";
    case Mode::CWGANGP: return "CWGANGP";
    case Mode::SPCAGAN: return "SPCAGAN";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view s) {
  for (auto m : {Mode::CGAN, Mode::ACGAN, Mode::CWGANGP, Mode::SPCAGAN}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

// Config ------------------------------------------------------------------

std::vector<std::size_t> GanConfig::effective_disc_hidden() const {
  if (!disc_hidden.empty()) return disc_hidden;
  return {gen_hidden.rbegin(), gen_hidden.rend()};
}

void GanConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Spec, "gan config: " + m); };
  if (latent_dim < 1) fail("latent_dim must be >= 1");
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (spca_k < 1 || spca_k > feature_dim) fail("spca_k must lie in [1, feature_dim]");
  if (batch_size <= spca_k + 1) fail("batch_size must exceed spca_k + 1");
  if (!(lr_g > 0) || !(lr_d > 0)) fail("learning rates must be positive");
  if (!(leaky_slope >= 0)) fail("leaky_slope must be >= 0");
  if (!(spca_weight >= 0)) fail("spca_weight must be >= 0");
  if (!(gp_weight >= 0)) fail("gp_weight must be >= 0");
  if (critic_steps < 1) fail("critic_steps must be >= 1");
  for (auto h : gen_hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
  for (auto h : disc_hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
}

std::string GanConfig::to_json() const {
  json j = {{"mode", to_string(mode)},
            {"latent_dim", latent_dim},
            {"n_classes", n_classes},
            {"feature_dim", feature_dim},
            {"gen_hidden", gen_hidden},
            {"disc_hidden", disc_hidden},
            {"lr_g", lr_g},
            {"lr_d", lr_d},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"leaky_slope", leaky_slope},
            {"spca_weight", spca_weight},
            {"spca_k", spca_k},
            {"gp_weight", gp_weight},
            {"critic_steps", critic_steps},
            {"trace_samples", trace_samples},
            {"seed", seed}};
  return j.dump();
}

GanConfig GanConfig::from_json(const std::string& text) {
  GanConfig c;
  try {
    const auto j = json::parse(text);
    const auto mode = parse_mode(j.at("mode").get<std::string>());
    if (!mode) throw Error(ErrorKind::Spec, "unknown GAN mode");
    c.mode = *mode;
    c.latent_dim = j.at("latent_dim");
    c.n_classes = j.at("n_classes");
    c.feature_dim = j.at("feature_dim");
    c.gen_hidden = j.at("gen_hidden").get<std::vector<std::size_t>>();
    c.disc_hidden = j.at("disc_hidden").get<std::vector<std::size_t>>();
    c.lr_g = j.at("lr_g");
    c.lr_d = j.at("lr_d");
    c.batch_size = j.at("batch_size");
    c.max_epochs = j.at("max_epochs");
    c.leaky_slope = j.at("leaky_slope");
    c.spca_weight = j.at("spca_weight");
    c.spca_k = j.at("spca_k");
    c.gp_weight = j.at("gp_weight");
    c.critic_steps = j.at("critic_steps");
    c.trace_samples = j.at("trace_samples");
    c.seed = j.at("seed");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("gan config: ") + e.what());
  }
  return c;
}

// Losses ------------------------------------------------------------------

double source_loss(const Vector& d_real_prob, const Vector& d_fake_prob) {
  auto clamp = [](double p) { return std::clamp(p, 1e-7, 1.0 - 1e-7); };
  double lr = 0, lf = 0;
  for (Eigen::Index i = 0; i < d_real_prob.size(); ++i) lr += std::log(clamp(d_real_prob(i)));
  for (Eigen::Index i = 0; i < d_fake_prob.size(); ++i) lf += std::log(1.0 - clamp(d_fake_prob(i)));
  const double mr = d_real_prob.size() ? lr / static_cast<double>(d_real_prob.size()) : 0.0;
  const double mf = d_fake_prob.size() ? lf / static_cast<double>(d_fake_prob.size()) : 0.0;
  return mr + mf;
}

double class_loss(const Matrix& probs_real, const Labels& labels_real, const Matrix& probs_fake,
                  const Labels& labels_fake) {
  auto side = [](const Matrix& p, const Labels& y) {
    if (static_cast<std::size_t>(p.rows()) != y.size()) throw Error(ErrorKind::Range, "class_loss: shape mismatch");
    if (y.empty()) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] < 0 || y[i] >= p.cols()) throw Error(ErrorKind::Range, "class_loss: label out of range");
      s += std::log(std::max(p(static_cast<Eigen::Index>(i), y[i]), 1e-7));
    }
    return s / static_cast<double>(y.size());
  };
  return side(probs_real, labels_real) + side(probs_fake, labels_fake);
}

// SPCA regularizer --------------------------------------------------------

namespace {

struct Eig {
  Vector values;  // descending
  Matrix vectors;
  Matrix centered;
};

std::optional<Eig> scatter_eig(const Matrix& x) {
  Eig e;
  e.centered = x.rowwise() - x.colwise().mean();
  const Matrix s = e.centered.transpose() * e.centered;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
  if (solver.info() != Eigen::Success) return std::nullopt;
  e.values = solver.eigenvalues().reverse();
  e.vectors = solver.eigenvectors().rowwise().reverse();
  return e;
}

constexpr double kGapTol = 1e-9;

}  // namespace

SpcaTerm spca_regularizer(const Matrix& x_real, const Matrix& x_fake, std::size_t k, bool with_grad) {
  if (x_real.cols() != x_fake.cols()) throw Error(ErrorKind::Range, "spca_regularizer: feature dims differ");
  const auto f = x_fake.cols();
  const auto kk = static_cast<Eigen::Index>(k);
  if (k < 1 || kk > f) throw Error(ErrorKind::Range, "spca_regularizer: k outside [1, F]");
  if (x_real.rows() <= kk || x_fake.rows() <= kk) throw Error(ErrorKind::Range, "spca_regularizer: batch rows must exceed k");

  SpcaTerm t;
  auto skip = [&](std::string why) {
    t.skipped = true;
    t.reason = std::move(why);
    t.grad = Matrix::Zero(x_fake.rows(), f);
    return t;
  };
  if (!x_real.allFinite() || !x_fake.allFinite()) return skip("non-finite batch");
  const auto er = scatter_eig(x_real);
  const auto ef = scatter_eig(x_fake);
  if (!er || !ef) return skip("eigendecomposition failed");
  if (kk < f) {
    if (er->values(kk - 1) - er->values(kk) < kGapTol) return skip("eigen-gap below tolerance in real batch");
    if (ef->values(kk - 1) - ef->values(kk) < kGapTol) return skip("eigen-gap below tolerance in fake batch");
  }
  const Matrix l = er->vectors.leftCols(kk);
  const Matrix m = ef->vectors.leftCols(kk);
  t.value = static_cast<double>(k) - (l.transpose() * m).squaredNorm();
  if (!with_grad) return t;

  // d spca / d S for S = C^T C of the fake batch, from first-order
  // eigenvector perturbation; pairs inside the top-k block cancel.
  const Matrix p = l * l.transpose();
  const Matrix& u = ef->vectors;
  const Matrix pu = p * u;
  Matrix gs = Matrix::Zero(f, f);
  for (Eigen::Index i = 0; i < kk; ++i) {
    for (Eigen::Index j = kk; j < f; ++j) {
      const double c = u.col(i).dot(pu.col(j)) / (ef->values(i) - ef->values(j));
      gs.noalias() += c * (u.col(j) * u.col(i).transpose() + u.col(i) * u.col(j).transpose());
    }
  }
  t.grad = -2.0 * ef->centered * gs;
  return t;
}

// Gradient penalty ----------------------------------------------------------

namespace {

// Layers must alternate Dense, LeakyReLU, ..., Dense with a scalar output.
// wgrads[i] receives the penalty gradient of the i-th Dense weight (or null).
double gp_impl(const std::vector<const nn::Layer*>& layers, const Matrix& input, Eigen::Index x_cols,
               const std::vector<Matrix*>& wgrads) {
  std::vector<const nn::Dense*> dense;
  std::vector<Matrix> masks;  // masks[i]: derivative of the activation after dense[i]
  Matrix h = input;
  bool expect_dense = true;
  for (const auto* layer : layers) {
    if (const auto* d = dynamic_cast<const nn::Dense*>(layer); d && expect_dense) {
      h = h * d->weight();
      h.rowwise() += d->bias().row(0);
      dense.push_back(d);
      expect_dense = false;
    } else if (const auto* a = dynamic_cast<const nn::LeakyReLU*>(layer); a && !expect_dense) {
      const double s = a->slope();
      masks.push_back(h.unaryExpr([s](double v) { return v > 0.0 ? 1.0 : s; }));
      h = h.cwiseProduct(masks.back());
      expect_dense = true;
    } else {
      throw Error(ErrorKind::Spec, "gradient penalty supports alternating Dense/LeakyReLU critics only");
    }
  }
  if (dense.empty() || expect_dense || h.cols() != 1) {
    throw Error(ErrorKind::Spec, "gradient penalty needs a critic ending in a scalar Dense layer");
  }

  const auto n = input.rows();
  const auto L = dense.size();
  std::vector<Matrix> delta(L);  // delta[i]: d out / d (pre-activation of dense[i])
  delta[L - 1] = Matrix::Ones(n, 1);
  for (std::size_t i = L - 1; i > 0; --i) {
    delta[i - 1] = (delta[i] * dense[i]->weight().transpose()).cwiseProduct(masks[i - 1]);
  }
  const Matrix g = delta[0] * dense[0]->weight().transpose();
  const Matrix gx = g.leftCols(x_cols);
  const Vector norms = gx.rowwise().norm();
  const double penalty = (norms.array() - 1.0).square().mean();

  if (!wgrads.empty()) {
    Matrix r = Matrix::Zero(n, input.cols());
    for (Eigen::Index s = 0; s < n; ++s) {
      if (norms(s) > 0.0) {
        r.row(s).head(x_cols) = (2.0 / static_cast<double>(n)) * (norms(s) - 1.0) / norms(s) * gx.row(s);
      }
    }
    for (std::size_t i = 0; i < L; ++i) {
      if (wgrads[i]) wgrads[i]->noalias() += r.transpose() * delta[i];
      if (i + 1 < L) r = (r * dense[i]->weight()).cwiseProduct(masks[i]);
    }
  }
  return penalty;
}

void collect(const nn::Sequential& net, std::vector<const nn::Layer*>& layers) {
  for (std::size_t i = 0; i < net.size(); ++i) layers.push_back(&net.layer(i));
}

// Pointers to the weight gradients of every Dense layer of `net`.
void collect_wgrads(const nn::Sequential& net, std::vector<Matrix>& grads, std::vector<Matrix*>& out) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& layer = const_cast<nn::Layer&>(net.layer(i));
    const auto np = layer.params().size();
    if (layer.kind() == "dense") out.push_back(&grads[off]);
    off += np;
  }
}

Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (b.cols() == 0) return a;
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

double gradient_penalty_at(const nn::Sequential& critic, const Matrix& x_interp, const Matrix& cond,
                           std::vector<Matrix>* grads) {
  std::vector<const nn::Layer*> layers;
  collect(critic, layers);
  std::vector<Matrix*> wg;
  if (grads) collect_wgrads(critic, *grads, wg);
  return gp_impl(layers, hconcat(x_interp, cond), x_interp.cols(), wg);
}

double gradient_penalty(const nn::Sequential& critic, const Matrix& x_real, const Matrix& x_fake, const Matrix& cond,
                        Rng& rng, std::vector<Matrix>* grads) {
  if (x_real.rows() != x_fake.rows() || x_real.cols() != x_fake.cols()) {
    throw Error(ErrorKind::Range, "gradient_penalty: batches differ in shape");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix xi(x_real.rows(), x_real.cols());
  for (Eigen::Index s = 0; s < x_real.rows(); ++s) {
    const double e = u(rng);
    xi.row(s) = e * x_real.row(s) + (1.0 - e) * x_fake.row(s);
  }
  return gradient_penalty_at(critic, xi, cond, grads);
}

// Model -------------------------------------------------------------------

GanModel GanModel::init(const GanConfig& cfg) {
  cfg.validate();
  GanModel m;
  m.config = cfg;
  const auto c = cfg.n_classes;
  Rng g_rng(derive_seed(cfg.seed, 1));
  m.generator = nn::mlp(cfg.latent_dim + c, cfg.gen_hidden, cfg.feature_dim, cfg.leaky_slope, g_rng);

  Rng d_rng(derive_seed(cfg.seed, 2));
  const bool conditional = cfg.mode == Mode::CGAN || cfg.mode == Mode::CWGANGP;
  const std::size_t in = cfg.feature_dim + (conditional ? c : 0);
  auto& d = m.discriminator;
  d.trunk = nn::Sequential(in);
  std::size_t prev = in;
  for (auto h : cfg.effective_disc_hidden()) {
    d.trunk.add<nn::Dense>(prev, h, d_rng);
    d.trunk.add<nn::LeakyReLU>(h, cfg.leaky_slope);
    prev = h;
  }
  d.source_head = nn::Sequential(prev);
  d.source_head.add<nn::Dense>(prev, 1, d_rng);
  d.class_head = nn::Sequential(prev);
  if (!conditional) d.class_head.add<nn::Dense>(prev, c, d_rng);
  return m;
}

Matrix GanModel::generate(const Matrix& z, const Labels& labels) const {
  if (static_cast<std::size_t>(z.cols()) != config.latent_dim) throw Error(ErrorKind::Range, "latent width mismatch");
  return generator.predict(hconcat(z, one_hot(labels, static_cast<int>(config.n_classes))));
}

Matrix GanModel::sample(int class_id, std::size_t n, std::uint64_t seed) const {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= config.n_classes) {
    throw Error(ErrorKind::Range, "class id " + std::to_string(class_id) + " outside [0, " +
                                      std::to_string(config.n_classes) + ")");
  }
  if (n == 0) return Matrix(0, static_cast<Eigen::Index>(config.feature_dim));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(config.latent_dim));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = normal(rng);
  }
  return generate(z, Labels(n, class_id));
}

Vector GanModel::source_prob(const Matrix& x, const Labels& labels) const {
  const auto& d = discriminator;
  const Matrix in = d.conditional_input() ? hconcat(x, one_hot(labels, static_cast<int>(config.n_classes))) : x;
  const Matrix logit = d.source_head.predict(d.trunk.predict(in));
  if (config.mode == Mode::CWGANGP) return logit.col(0);
  return nn::sigmoid(logit).col(0);
}

Matrix GanModel::class_prob(const Matrix& x) const {
  const auto& d = discriminator;
  if (d.conditional_input()) return Matrix(x.rows(), 0);
  return nn::softmax(d.class_head.predict(d.trunk.predict(x)));
}

void GanModel::save(const std::filesystem::path& path) const {
  checkpoint::Checkpoint c;
  c.kind = "gan";
  json meta = json::parse(config.to_json());
  meta["spca_skips"] = spca_skips;
  json hist = json::array();
  for (const auto& r : history) {
    hist.push_back({r.epoch, r.loss.l_source, r.loss.l_class, r.loss.l_spca, r.loss.total_g, r.loss.total_d,
                    std::isfinite(r.spca_trace) ? json(r.spca_trace) : json(nullptr)});
  }
  meta["history"] = hist;
  c.config_json = meta.dump();
  checkpoint::put(c, "generator", generator);
  checkpoint::put(c, "disc.trunk", discriminator.trunk);
  checkpoint::put(c, "disc.source", discriminator.source_head);
  checkpoint::put(c, "disc.class", discriminator.class_head);
  checkpoint::save(c, path);
}

GanModel GanModel::load(const std::filesystem::path& path) {
  const auto c = checkpoint::load(path);
  if (c.kind != "gan") throw Error(ErrorKind::Format, path.string() + ": not a GAN checkpoint");
  auto m = init(GanConfig::from_json(c.config_json));
  checkpoint::get(c, "generator", m.generator);
  checkpoint::get(c, "disc.trunk", m.discriminator.trunk);
  checkpoint::get(c, "disc.source", m.discriminator.source_head);
  checkpoint::get(c, "disc.class", m.discriminator.class_head);
  const auto meta = json::parse(c.config_json);
  m.spca_skips = meta.value("spca_skips", std::size_t{0});
  for (const auto& r : meta.value("history", json::array())) {
    EpochRecord e;
    e.epoch = r.at(0);
    e.loss = {r.at(1), r.at(2), r.at(3), r.at(4), r.at(5)};
    e.spca_trace = r.at(6).is_null() ? std::nan("") : r.at(6).get<double>();
    m.history.push_back(e);
  }
  return m;
}

// Training ----------------------------------------------------------------

GanTrainer::GanTrainer(const Matrix& x, const Labels& y, const GanConfig& cfg)
    : x_(x),
      y_(y),
      model_(GanModel::init(cfg)),
      opt_g_(cfg.lr_g, 0.5, 0.999),
      opt_d_trunk_(cfg.lr_d, 0.5, 0.999),
      opt_d_source_(cfg.lr_d, 0.5, 0.999),
      opt_d_class_(cfg.lr_d, 0.5, 0.999),
      rng_(derive_seed(cfg.seed, 3)),
      trace_rng_(derive_seed(cfg.seed, 4)) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error(ErrorKind::Range, "GAN data: rows and labels differ");
  if (static_cast<std::size_t>(x.cols()) != cfg.feature_dim) {
    throw Error(ErrorKind::Range, "GAN data has " + std::to_string(x.cols()) + " columns, config expects " +
                                      std::to_string(cfg.feature_dim));
  }
  if (x.rows() < static_cast<Eigen::Index>(cfg.spca_k + 2)) throw Error(ErrorKind::Input, "too few rows to train a GAN");
  if (!x.allFinite()) throw Error(ErrorKind::Numeric, "GAN data contains non-finite values");
  std::vector<std::size_t> seen(cfg.n_classes, 0);
  for (int l : y) {
    if (l < 0 || static_cast<std::size_t>(l) >= cfg.n_classes) throw Error(ErrorKind::Range, "GAN label out of range");
    ++seen[static_cast<std::size_t>(l)];
  }
  const auto present = std::count_if(seen.begin(), seen.end(), [](std::size_t n) { return n > 0; });
  if ((cfg.mode == Mode::ACGAN || cfg.mode == Mode::SPCAGAN) && present < 2) {
    throw Error(ErrorKind::Input, to_string(cfg.mode) + " needs at least two classes in the training data");
  }
  order_.resize(static_cast<std::size_t>(x.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  const auto n = static_cast<std::size_t>(x.rows());
  batches_per_epoch_ = std::max<std::size_t>(1, n / cfg.batch_size);

  trace_rows_.resize(n);
  std::iota(trace_rows_.begin(), trace_rows_.end(), 0);
  std::shuffle(trace_rows_.begin(), trace_rows_.end(), trace_rng_);
  trace_rows_.resize(std::min(n, cfg.trace_samples));
  std::sort(trace_rows_.begin(), trace_rows_.end());
}

void GanTrainer::begin_epoch() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  epoch_sum_ = {};
  epoch_batches_ = 0;
}

Matrix GanTrainer::batch_rows(const std::vector<std::size_t>& idx) const {
  Matrix m(static_cast<Eigen::Index>(idx.size()), x_.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = x_.row(static_cast<Eigen::Index>(idx[i]));
  return m;
}

Labels GanTrainer::batch_labels(const std::vector<std::size_t>& idx) const {
  Labels l;
  l.reserve(idx.size());
  for (auto i : idx) l.push_back(y_[i]);
  return l;
}

Matrix GanTrainer::latent(std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(model_.config.latent_dim));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = normal(rng_);
  }
  return z;
}

namespace {

struct DiscPass {
  nn::Tape trunk, source, cls;
  Matrix source_logit, class_logit;
};

DiscPass disc_forward(const Discriminator& d, const Matrix& in) {
  DiscPass p;
  const Matrix h = d.trunk.forward(in, p.trunk, nn::Pass::Eval, nullptr);
  p.source_logit = d.source_head.forward(h, p.source, nn::Pass::Eval, nullptr);
  if (d.class_head.size()) p.class_logit = d.class_head.forward(h, p.cls, nn::Pass::Eval, nullptr);
  return p;
}

struct DiscGrads {
  std::vector<Matrix> trunk, source, cls;
};

// Backward through both heads and the trunk; returns d/d(input).
Matrix disc_backward(const Discriminator& d, const DiscPass& p, const Matrix& dsource, const Matrix* dclass,
                     DiscGrads& g) {
  Matrix dh = d.source_head.backward(dsource, p.source, g.source);
  if (dclass) dh += d.class_head.backward(*dclass, p.cls, g.cls);
  return d.trunk.backward(dh, p.trunk, g.trunk);
}

void check_finite(double v, const char* what, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::Numeric, std::string("non-finite ") + what + " at epoch " + std::to_string(epoch + 1) +
                                        ", batch " + std::to_string(batch + 1));
  }
}

}  // namespace

LossBundle GanTrainer::step() {
  if (batch_in_epoch_ == 0) begin_epoch();
  const auto& cfg = model_.config;
  auto& d = model_.discriminator;
  const std::size_t n_all = order_.size();
  const std::size_t bsz = std::min(cfg.batch_size, n_all);
  const std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(batch_in_epoch_ * bsz),
                                     order_.begin() + static_cast<std::ptrdiff_t>((batch_in_epoch_ + 1) * bsz));
  const Matrix xr = batch_rows(idx);
  const Labels yr = batch_labels(idx);
  const Matrix oh = one_hot(yr, static_cast<int>(cfg.n_classes));
  const double n = static_cast<double>(bsz);
  const bool conditional = d.conditional_input();
  auto disc_in = [&](const Matrix& x) { return conditional ? hconcat(x, oh) : x; };

  LossBundle lb;
  auto d_step = [&](const DiscGrads& g) {
    opt_d_trunk_.step(d.trunk.params(), g.trunk);
    opt_d_source_.step(d.source_head.params(), g.source);
    if (d.class_head.size()) opt_d_class_.step(d.class_head.params(), g.cls);
  };
  auto fresh = [&] { return DiscGrads{d.trunk.zero_grads(), d.source_head.zero_grads(), d.class_head.zero_grads()}; };

  if (cfg.mode == Mode::CWGANGP) {
    for (std::size_t c = 0; c < cfg.critic_steps; ++c) {
      const Matrix xf = model_.generator.predict(hconcat(latent(bsz), oh));
      const auto pr = disc_forward(d, disc_in(xr));
      const auto pf = disc_forward(d, disc_in(xf));
      auto g = fresh();
      disc_backward(d, pr, Matrix::Constant(pr.source_logit.rows(), 1, -1.0 / n), nullptr, g);
      disc_backward(d, pf, Matrix::Constant(pf.source_logit.rows(), 1, 1.0 / n), nullptr, g);
      // Penalty gradient for the stacked trunk + source head.
      std::vector<const nn::Layer*> layers;
      collect(d.trunk, layers);
      collect(d.source_head, layers);
      std::vector<Matrix> gp_t = d.trunk.zero_grads(), gp_s = d.source_head.zero_grads();
      std::vector<Matrix*> wg;
      collect_wgrads(d.trunk, gp_t, wg);
      collect_wgrads(d.source_head, gp_s, wg);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Matrix xi(xr.rows(), xr.cols());
      for (Eigen::Index s = 0; s < xr.rows(); ++s) {
        const double e = u(rng_);
        xi.row(s) = e * xr.row(s) + (1.0 - e) * xf.row(s);
      }
      const double gp = gp_impl(layers, hconcat(xi, oh), xr.cols(), wg);
      for (std::size_t i = 0; i < gp_t.size(); ++i) g.trunk[i] += cfg.gp_weight * gp_t[i];
      for (std::size_t i = 0; i < gp_s.size(); ++i) g.source[i] += cfg.gp_weight * gp_s[i];
      const double gap = pr.source_logit.mean() - pf.source_logit.mean();
      lb.l_source = gap;
      lb.total_d = -gap + cfg.gp_weight * gp;
      check_finite(lb.total_d, "critic loss", epoch_, batch_in_epoch_);
      d_step(g);
    }
    nn::Tape tg;
    const Matrix xf = model_.generator.forward(hconcat(latent(bsz), oh), tg, nn::Pass::Train, &rng_);
    const auto pf = disc_forward(d, disc_in(xf));
    lb.total_g = -pf.source_logit.mean();
    check_finite(lb.total_g, "generator loss", epoch_, batch_in_epoch_);
    auto scratch = fresh();
    const Matrix din = disc_backward(d, pf, Matrix::Constant(pf.source_logit.rows(), 1, -1.0 / n), nullptr, scratch);
    auto gg = model_.generator.zero_grads();
    model_.generator.backward(din.leftCols(xf.cols()), tg, gg);
    opt_g_.step(model_.generator.params(), gg);
  } else {
    // Discriminator update.
    {
      const Matrix xf = model_.generator.predict(hconcat(latent(bsz), oh));
      const auto pr = disc_forward(d, disc_in(xr));
      const auto pf = disc_forward(d, disc_in(xf));
      const Matrix sr = nn::sigmoid(pr.source_logit), sf = nn::sigmoid(pf.source_logit);
      const double log_real = nn::log_sigmoid(pr.source_logit).mean();
      const double log_fake = nn::log_sigmoid(-pf.source_logit).mean();
      lb.l_source = log_real + log_fake;
      lb.total_d = -lb.l_source;
      auto g = fresh();
      const Matrix ds_r = (sr.array() - 1.0) / n;
      const Matrix ds_f = sf.array() / n;
      if (conditional) {
        disc_backward(d, pr, ds_r, nullptr, g);
        disc_backward(d, pf, ds_f, nullptr, g);
      } else {
        Matrix dc_r, dc_f;
        const double ce_r = nn::cross_entropy(pr.class_logit, yr, &dc_r);
        const double ce_f = nn::cross_entropy(pf.class_logit, yr, &dc_f);
        lb.l_class = -(ce_r + ce_f);
        lb.total_d += ce_r + ce_f;
        disc_backward(d, pr, ds_r, &dc_r, g);
        disc_backward(d, pf, ds_f, &dc_f, g);
      }
      check_finite(lb.total_d, "discriminator loss", epoch_, batch_in_epoch_);
      d_step(g);
    }
    // Generator update (non-saturating source term).
    nn::Tape tg;
    const Matrix xf = model_.generator.forward(hconcat(latent(bsz), oh), tg, nn::Pass::Train, &rng_);
    const auto pf = disc_forward(d, disc_in(xf));
    const Matrix sf = nn::sigmoid(pf.source_logit);
    lb.total_g = -nn::log_sigmoid(pf.source_logit).mean();
    const Matrix ds = (sf.array() - 1.0) / n;
    auto scratch = fresh();
    Matrix din;
    if (conditional) {
      din = disc_backward(d, pf, ds, nullptr, scratch);
    } else {
      Matrix dc;
      lb.total_g += nn::cross_entropy(pf.class_logit, yr, &dc);
      din = disc_backward(d, pf, ds, &dc, scratch);
    }
    Matrix dx = din.leftCols(xf.cols());
    if (cfg.mode == Mode::SPCAGAN && cfg.spca_weight != 0.0) {
      const auto term = spca_regularizer(xr, xf, cfg.spca_k);
      if (term.skipped) {
        ++model_.spca_skips;
      } else {
        lb.l_spca = term.value;
        lb.total_g += cfg.spca_weight * term.value;
        dx += cfg.spca_weight * term.grad;
      }
    }
    check_finite(lb.total_g, "generator loss", epoch_, batch_in_epoch_);
    auto gg = model_.generator.zero_grads();
    model_.generator.backward(dx, tg, gg);
    opt_g_.step(model_.generator.params(), gg);
  }

  epoch_sum_.l_source += lb.l_source;
  epoch_sum_.l_class += lb.l_class;
  epoch_sum_.l_spca += lb.l_spca;
  epoch_sum_.total_g += lb.total_g;
  epoch_sum_.total_d += lb.total_d;
  ++epoch_batches_;
  ++steps_;
  if (++batch_in_epoch_ == batches_per_epoch_) batch_in_epoch_ = 0;
  return lb;
}

double GanTrainer::spca_trace() {
  const auto& cfg = model_.config;
  const Matrix real = batch_rows(trace_rows_);
  const Labels labels = batch_labels(trace_rows_);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(real.rows(), static_cast<Eigen::Index>(cfg.latent_dim));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = normal(trace_rng_);
  }
  const Matrix fake = model_.generate(z, labels);
  try {
    return linmetrics::spca(real, fake, cfg.spca_k);
  } catch (const Error&) {
    return std::nan("");
  }
}

EpochRecord GanTrainer::run_epoch() {
  do {
    step();
  } while (batch_in_epoch_ != 0);
  EpochRecord r;
  r.epoch = ++epoch_;
  const double nb = static_cast<double>(std::max<std::size_t>(epoch_batches_, 1));
  r.loss = {epoch_sum_.l_source / nb, epoch_sum_.l_class / nb, epoch_sum_.l_spca / nb, epoch_sum_.total_g / nb,
            epoch_sum_.total_d / nb};
  r.spca_trace = spca_trace();
  model_.history.push_back(r);
  return r;
}

GanModel GanTrainer::train() {
  while (epoch_ < model_.config.max_epochs) run_epoch();
  return model_;
}

GanModel train(const Matrix& x, const Labels& y, const GanConfig& cfg) {
  GanTrainer t(x, y, cfg);
  return t.train();
}

void write_history_csv(const GanModel& model, const std::filesystem::path& path,
                       const std::vector<std::string>& comment_lines) {
  auto fmt = [](double v) {
    if (!std::isfinite(v)) return std::string("nan");
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  };
  std::string out;
  for (const auto& c : comment_lines) out += "# " + c + "\n";
  out += "epoch,l_source,l_class,l_spca,total_g,total_d,spca_trace\n";
  for (const auto& r : model.history) {
    out += std::to_string(r.epoch) + "," + fmt(r.loss.l_source) + "," + fmt(r.loss.l_class) + "," +
           fmt(r.loss.l_spca) + "," + fmt(r.loss.total_g) + "," + fmt(r.loss.total_d) + "," + fmt(r.spca_trace) + "\n";
  }
  csv::write_atomic(path, out);
}

}  // namespace spcagan::gan
