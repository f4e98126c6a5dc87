#include "spcagan/detect.hpp"

#include "spcagan/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spcagan::detect {

using nlohmann::json;

std::string to_string(Kind k) {
  switch (k) {
    case Kind::MLP: return "MLP";
    case Kind::CNN1D: return "CNN1D";
    case Kind::BNN: return "BNN";
    case Kind::ENSEMBLE: return "ENSEMBLE";
    case Kind::HYBRID: return "HYBRID";
  }
  return "?";
}

std::optional<Kind> parse_kind(std::string_view s) {
  for (auto k : {Kind::MLP, Kind::CNN1D, Kind::BNN, Kind::ENSEMBLE, Kind::HYBRID}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

void DetectorConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Spec, "detector config: " + m); };
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (mc_samples < 1) fail("mc_samples must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (!(kl_weight >= 0.0)) fail("kl_weight must be >= 0");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  for (auto h : hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
  const bool conv = kind == Kind::CNN1D || kind == Kind::ENSEMBLE || kind == Kind::HYBRID;
  if (conv && feature_dim < kMinCnnFeatures) {
    fail("the 1-D convolutional stack needs feature_dim >= " + std::to_string(kMinCnnFeatures) + ", got " +
         std::to_string(feature_dim));
  }
}

std::string DetectorConfig::to_json() const {
  json j = {{"kind", to_string(kind)},   {"n_classes", n_classes}, {"feature_dim", feature_dim},
            {"hidden", hidden},          {"dropout_rate", dropout_rate}, {"mc_samples", mc_samples},
            {"kl_weight", kl_weight},    {"epochs", epochs},       {"lr", lr},
            {"batch_size", batch_size},  {"seed", seed}};
  return j.dump();
}

DetectorConfig DetectorConfig::from_json(const std::string& text) {
  DetectorConfig c;
  try {
    const auto j = json::parse(text);
    const auto k = parse_kind(j.at("kind").get<std::string>());
    if (!k) throw Error(ErrorKind::Spec, "unknown detector kind");
    c.kind = *k;
    c.n_classes = j.at("n_classes");
    c.feature_dim = j.at("feature_dim");
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.dropout_rate = j.at("dropout_rate");
    c.mc_samples = j.at("mc_samples");
    c.kl_weight = j.at("kl_weight");
    c.epochs = j.at("epochs");
    c.lr = j.at("lr");
    c.batch_size = j.at("batch_size");
    c.seed = j.at("seed");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("detector config: ") + e.what());
  }
  return c;
}

// Metrics -------------------------------------------------------------------

Labels argmax(const Matrix& probs) {
  Labels out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j) {
      if (probs(i, j) > probs(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

ClassificationReport report_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const auto k = confusion.size();
  ClassificationReport r;
  r.confusion = confusion;
  std::vector<double> row(k, 0.0), col(k, 0.0);
  double n = 0, diag = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (confusion[i].size() != k) throw Error(ErrorKind::Range, "confusion matrix must be square");
    for (std::size_t j = 0; j < k; ++j) {
      const auto v = static_cast<double>(confusion[i][j]);
      row[i] += v;
      col[j] += v;
      n += v;
    }
    diag += static_cast<double>(confusion[i][i]);
  }
  if (n == 0) throw Error(ErrorKind::Input, "cannot evaluate an empty prediction set");

  double sp = 0, sr = 0, sf = 0;
  std::size_t supported = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (row[c] == 0) continue;
    ++supported;
    const double tp = static_cast<double>(confusion[c][c]);
    const double p = col[c] > 0 ? tp / col[c] : 0.0;
    const double rc = tp / row[c];
    sp += p;
    sr += rc;
    sf += p + rc > 0 ? 2.0 * p * rc / (p + rc) : 0.0;
  }
  r.precision = sp / static_cast<double>(supported);
  r.recall = sr / static_cast<double>(supported);
  r.f1 = sf / static_cast<double>(supported);

  const double po = diag / n;
  double pe = 0;
  for (std::size_t c = 0; c < k; ++c) pe += row[c] * col[c];
  pe /= n * n;
  r.kappa = 1.0 - pe != 0.0 ? (po - pe) / (1.0 - pe) : 0.0;

  double tp_sum = 0, t2 = 0, p2 = 0;
  for (std::size_t c = 0; c < k; ++c) {
    tp_sum += row[c] * col[c];
    t2 += row[c] * row[c];
    p2 += col[c] * col[c];
  }
  const double denom = std::sqrt((n * n - p2) * (n * n - t2));
  r.mcc = denom > 0 ? (n * diag - tp_sum) / denom : 0.0;
  return r;
}

ClassificationReport evaluate(const Labels& predicted, const Labels& truth, std::size_t n_classes) {
  if (predicted.size() != truth.size()) throw Error(ErrorKind::Range, "evaluate: prediction and truth lengths differ");
  if (truth.empty()) throw Error(ErrorKind::Input, "evaluate: empty input");
  std::vector<std::vector<std::size_t>> conf(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= n_classes || static_cast<std::size_t>(p) >= n_classes) {
      throw Error(ErrorKind::Range, "evaluate: label out of range");
    }
    ++conf[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return report_from_confusion(conf);
}

ClassificationReport evaluate(const Prediction& pred, const Labels& truth) {
  return evaluate(pred.predicted, truth, static_cast<std::size_t>(pred.class_probs.cols()));
}

// Differentiable helpers ----------------------------------------------------

namespace {

// d/dz of sum(up .* log_softmax(z)).
Matrix log_softmax_vjp(const Matrix& z, const Matrix& up) {
  const Matrix p = nn::softmax(z);
  return up - (p.array().colwise() * up.rowwise().sum().array()).matrix();
}

nn::Sequential relu_stack(std::size_t in, const std::vector<std::size_t>& hidden, Rng& rng) {
  nn::Sequential s(in);
  std::size_t prev = in;
  for (auto h : hidden) {
    s.add<nn::Dense>(prev, h, rng);
    s.add<nn::LeakyReLU>(h, 0.0);
    prev = h;
  }
  return s;
}

void conv_blocks(nn::Sequential& s, std::size_t f, Rng& rng) {
  s.add<nn::Conv1D>(f, 1, 32, rng);
  s.add<nn::LeakyReLU>(f * 32, 0.0);
  s.add<nn::MaxPool1D>(f, 32);
  const auto l1 = f / 2;
  s.add<nn::Conv1D>(l1, 32, 64, rng);
  s.add<nn::LeakyReLU>(l1 * 64, 0.0);
  s.add<nn::MaxPool1D>(l1, 64);
}

}  // namespace

Matrix LogitModel::log_probs(const Matrix& x) const { return nn::log_softmax(net_.predict(x)); }

Matrix LogitModel::input_vjp(const Matrix& x, const Matrix& upstream) const {
  nn::Tape t;
  const Matrix z = net_.forward(x, t, nn::Pass::Eval, nullptr);
  auto scratch = net_.zero_grads();
  return net_.backward(log_softmax_vjp(z, upstream), t, scratch);
}

// Detector ------------------------------------------------------------------

struct Detector::Forward {
  nn::Tape mlp, cnn, head;
  Eigen::Index split = 0;
};

Detector Detector::build(const DetectorConfig& cfg) {
  cfg.validate();
  Detector d;
  d.cfg_ = cfg;
  Rng rng(derive_seed(cfg.seed, 1));
  const auto f = cfg.feature_dim, c = cfg.n_classes;
  const auto last = cfg.hidden.empty() ? f : cfg.hidden.back();
  auto cnn = [&] {
    nn::Sequential s(f);
    conv_blocks(s, f, rng);
    const auto flat = s.out_dim();
    s.add<nn::Dense>(flat, last, rng);
    s.add<nn::LeakyReLU>(last, 0.0);
    s.add<nn::Dense>(last, c, rng);
    return s;
  };
  switch (cfg.kind) {
    case Kind::MLP: d.nets_.push_back(nn::mlp(f, cfg.hidden, c, 0.0, rng)); break;
    case Kind::CNN1D: d.nets_.push_back(cnn()); break;
    case Kind::BNN: {
      nn::Sequential s(f);
      std::size_t prev = f;
      for (auto h : cfg.hidden) {
        s.add<nn::BayesDense>(prev, h, rng).sample_at_predict = true;
        s.add<nn::LeakyReLU>(h, 0.0);
        prev = h;
      }
      s.add<nn::BayesDense>(prev, c, rng).sample_at_predict = true;
      d.nets_.push_back(std::move(s));
      break;
    }
    case Kind::ENSEMBLE:
      d.nets_.push_back(nn::mlp(f, cfg.hidden, c, 0.0, rng));
      d.nets_.push_back(cnn());
      break;
    case Kind::HYBRID: {
      d.nets_.push_back(relu_stack(f, cfg.hidden, rng));
      nn::Sequential conv(f);
      conv_blocks(conv, f, rng);
      d.nets_.push_back(std::move(conv));
      const auto width = d.nets_[0].out_dim() + d.nets_[1].out_dim();
      nn::Sequential head(width);
      head.add<nn::Dropout>(width, cfg.dropout_rate);
      head.add<nn::BayesDense>(width, c, rng);
      d.nets_.push_back(std::move(head));
      break;
    }
  }
  return d;
}

std::size_t Detector::param_count() const {
  std::size_t n = 0;
  for (const auto& s : nets_) n += s.param_count();
  return n;
}

Matrix Detector::logits_single(std::size_t i, const Matrix& x, nn::Pass pass, Rng* rng) const {
  return nets_[i].predict(x, pass, rng);
}

Matrix Detector::hybrid_logits(const Matrix& x, nn::Pass pass, Rng* rng, Forward* fw) const {
  Forward local;
  Forward& f = fw ? *fw : local;
  const Matrix a = nets_[0].forward(x, f.mlp, pass, rng);
  const Matrix b = nets_[1].forward(x, f.cnn, pass, rng);
  Matrix h(x.rows(), a.cols() + b.cols());
  h << a, b;
  f.split = a.cols();
  return nets_[2].forward(h, f.head, pass, rng);
}

Matrix Detector::probs_once(const Matrix& x, nn::Pass pass, Rng* rng) const {
  switch (cfg_.kind) {
    case Kind::ENSEMBLE:
      return 0.5 * (nn::softmax(logits_single(0, x, pass, rng)) + nn::softmax(logits_single(1, x, pass, rng)));
    case Kind::HYBRID: return nn::softmax(hybrid_logits(x, pass, rng, nullptr));
    default: return nn::softmax(logits_single(0, x, pass, rng));
  }
}

Prediction Detector::predict(const Matrix& x, std::optional<std::uint64_t> seed) const {
  if (static_cast<std::size_t>(x.cols()) != cfg_.feature_dim) {
    throw Error(ErrorKind::Range, "detector expects " + std::to_string(cfg_.feature_dim) + " features, got " +
                                      std::to_string(x.cols()));
  }
  Prediction p;
  if (!stochastic()) {
    p.class_probs = probs_once(x, nn::Pass::Eval, nullptr);
    p.predicted = argmax(p.class_probs);
    p.uncertainty = Vector::Zero(x.rows());
    return p;
  }
  Rng rng(seed.value_or(derive_seed(cfg_.seed, 77)));
  std::vector<Matrix> samples;
  samples.reserve(cfg_.mc_samples);
  p.class_probs = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(cfg_.n_classes));
  for (std::size_t s = 0; s < cfg_.mc_samples; ++s) {
    samples.push_back(probs_once(x, nn::Pass::MonteCarlo, &rng));
    p.class_probs += samples.back();
  }
  p.class_probs /= static_cast<double>(cfg_.mc_samples);
  p.predicted = argmax(p.class_probs);
  p.uncertainty.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = p.predicted[static_cast<std::size_t>(i)];
    const double mean = p.class_probs(i, c);
    double var = 0;
    for (const auto& s : samples) var += (s(i, c) - mean) * (s(i, c) - mean);
    p.uncertainty(i) = std::sqrt(var / static_cast<double>(samples.size()));
  }
  return p;
}

Matrix Detector::log_probs(const Matrix& x) const {
  return probs_once(x, nn::Pass::Eval, nullptr).array().max(1e-300).log();
}

Matrix Detector::input_vjp(const Matrix& x, const Matrix& upstream) const {
  if (nets_.empty()) throw Error(ErrorKind::Spec, "detector has no network");
  switch (cfg_.kind) {
    case Kind::ENSEMBLE: {
      nn::Tape t0, t1;
      const Matrix z0 = nets_[0].forward(x, t0, nn::Pass::Eval, nullptr);
      const Matrix z1 = nets_[1].forward(x, t1, nn::Pass::Eval, nullptr);
      const Matrix p0 = nn::softmax(z0), p1 = nn::softmax(z1);
      const Matrix p = 0.5 * (p0 + p1);
      const Matrix dp = 0.5 * upstream.cwiseQuotient(p.cwiseMax(1e-300));
      auto through = [&](const Matrix& pm) {
        const Vector dot = dp.cwiseProduct(pm).rowwise().sum();
        return Matrix(pm.cwiseProduct(dp - dot.replicate(1, dp.cols())));
      };
      auto g0 = nets_[0].zero_grads(), g1 = nets_[1].zero_grads();
      return nets_[0].backward(through(p0), t0, g0) + nets_[1].backward(through(p1), t1, g1);
    }
    case Kind::HYBRID: {
      Forward f;
      const Matrix z = hybrid_logits(x, nn::Pass::Eval, nullptr, &f);
      auto gh = nets_[2].zero_grads(), ga = nets_[0].zero_grads(), gb = nets_[1].zero_grads();
      const Matrix dh = nets_[2].backward(log_softmax_vjp(z, upstream), f.head, gh);
      return nets_[0].backward(dh.leftCols(f.split), f.mlp, ga) +
             nets_[1].backward(dh.rightCols(dh.cols() - f.split), f.cnn, gb);
    }
    default: {
      nn::Tape t;
      const Matrix z = nets_[0].forward(x, t, nn::Pass::Eval, nullptr);
      auto g = nets_[0].zero_grads();
      return nets_[0].backward(log_softmax_vjp(z, upstream), t, g);
    }
  }
}

namespace {

void check_training_data(const Matrix& x, const Labels& y, const DetectorConfig& cfg) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error(ErrorKind::Range, "fit: rows and labels differ");
  if (static_cast<std::size_t>(x.cols()) != cfg.feature_dim) {
    throw Error(ErrorKind::Range, "fit: expected " + std::to_string(cfg.feature_dim) + " features, got " +
                                      std::to_string(x.cols()));
  }
  if (!x.allFinite()) throw Error(ErrorKind::Numeric, "fit: non-finite training data");
  std::vector<bool> seen(cfg.n_classes, false);
  for (int l : y) {
    if (l < 0 || static_cast<std::size_t>(l) >= cfg.n_classes) throw Error(ErrorKind::Range, "fit: label out of range");
    seen[static_cast<std::size_t>(l)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) throw Error(ErrorKind::Input, "fit: need at least two classes");
}

Matrix gather(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t from, std::size_t to) {
  Matrix m(static_cast<Eigen::Index>(to - from), x.cols());
  for (std::size_t i = from; i < to; ++i) m.row(static_cast<Eigen::Index>(i - from)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return m;
}

Labels gather(const Labels& y, const std::vector<std::size_t>& idx, std::size_t from, std::size_t to) {
  Labels l;
  for (std::size_t i = from; i < to; ++i) l.push_back(y[idx[i]]);
  return l;
}

void check_loss(double v, std::size_t epoch) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::Numeric, "non-finite detector loss at epoch " + std::to_string(epoch + 1));
  }
}

}  // namespace

void Detector::fit_net(std::size_t which, const Matrix& x, const Labels& y, std::uint64_t seed, bool record) {
  auto& net = nets_[which];
  nn::Adam opt(cfg_.lr);
  Rng rng(seed);
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  const double n = static_cast<double>(y.size());
  const bool bayes = cfg_.kind == Kind::BNN;
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0, kl_last = 0;
    std::size_t batches = 0;
    for (std::size_t from = 0; from < order.size(); from += cfg_.batch_size) {
      const auto to = std::min(order.size(), from + cfg_.batch_size);
      const Matrix xb = gather(x, order, from, to);
      const Labels yb = gather(y, order, from, to);
      nn::Tape t;
      const Matrix z = net.forward(xb, t, nn::Pass::Train, &rng);
      Matrix dz;
      double loss = nn::cross_entropy(z, yb, &dz);
      auto g = net.zero_grads();
      net.backward(dz, t, g);
      if (bayes) {
        kl_last = net.kl();
        loss += cfg_.kl_weight * kl_last / n;
        net.add_kl_grad(g, cfg_.kl_weight / n);
      }
      check_loss(loss, e);
      opt.step(net.params(), g);
      total += loss;
      ++batches;
    }
    if (record) {
      loss_history_.push_back(total / static_cast<double>(batches));
      if (bayes) kl_history_.push_back(net.kl());
    } else if (!loss_history_.empty() && e < loss_history_.size()) {
      loss_history_[e] = 0.5 * (loss_history_[e] + total / static_cast<double>(batches));
    }
  }
}

void Detector::fit_hybrid(const Matrix& x, const Labels& y) {
  nn::Adam opt_a(cfg_.lr), opt_b(cfg_.lr), opt_h(cfg_.lr);
  Rng rng(derive_seed(cfg_.seed, 10));
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  const double n = static_cast<double>(y.size());
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t from = 0; from < order.size(); from += cfg_.batch_size) {
      const auto to = std::min(order.size(), from + cfg_.batch_size);
      const Matrix xb = gather(x, order, from, to);
      const Labels yb = gather(y, order, from, to);
      Forward f;
      const Matrix z = hybrid_logits(xb, nn::Pass::Train, &rng, &f);
      Matrix dz;
      double loss = nn::cross_entropy(z, yb, &dz);
      auto ga = nets_[0].zero_grads(), gb = nets_[1].zero_grads(), gh = nets_[2].zero_grads();
      const Matrix dh = nets_[2].backward(dz, f.head, gh);
      nets_[0].backward(dh.leftCols(f.split), f.mlp, ga);
      nets_[1].backward(dh.rightCols(dh.cols() - f.split), f.cnn, gb);
      loss += cfg_.kl_weight * nets_[2].kl() / n;
      nets_[2].add_kl_grad(gh, cfg_.kl_weight / n);
      check_loss(loss, e);
      opt_a.step(nets_[0].params(), ga);
      opt_b.step(nets_[1].params(), gb);
      opt_h.step(nets_[2].params(), gh);
      total += loss;
      ++batches;
    }
    loss_history_.push_back(total / static_cast<double>(batches));
    kl_history_.push_back(nets_[2].kl());
  }
}

void Detector::fit(const Matrix& x, const Labels& y) {
  check_training_data(x, y, cfg_);
  loss_history_.clear();
  kl_history_.clear();
  switch (cfg_.kind) {
    case Kind::HYBRID: fit_hybrid(x, y); break;
    case Kind::ENSEMBLE:
      fit_net(0, x, y, derive_seed(cfg_.seed, 10), true);
      fit_net(1, x, y, derive_seed(cfg_.seed, 11), false);
      break;
    default: fit_net(0, x, y, derive_seed(cfg_.seed, 10), true); break;
  }
}

void Detector::save(const std::filesystem::path& path) const {
  checkpoint::Checkpoint c;
  c.kind = "detector";
  json meta = json::parse(cfg_.to_json());
  meta["loss_history"] = loss_history_;
  meta["kl_history"] = kl_history_;
  c.config_json = meta.dump();
  for (std::size_t i = 0; i < nets_.size(); ++i) checkpoint::put(c, "net" + std::to_string(i), nets_[i]);
  checkpoint::save(c, path);
}

Detector Detector::load(const std::filesystem::path& path) {
  const auto c = checkpoint::load(path);
  if (c.kind != "detector") throw Error(ErrorKind::Format, path.string() + ": not a detector checkpoint");
  auto d = build(DetectorConfig::from_json(c.config_json));
  for (std::size_t i = 0; i < d.nets_.size(); ++i) checkpoint::get(c, "net" + std::to_string(i), d.nets_[i]);
  const auto meta = json::parse(c.config_json);
  d.loss_history_ = meta.value("loss_history", std::vector<double>{});
  d.kl_history_ = meta.value("kl_history", std::vector<double>{});
  return d;
}

}  // namespace spcagan::detect
