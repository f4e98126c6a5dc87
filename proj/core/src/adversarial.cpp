#include "spcagan/adversarial.hpp"

#include <cmath>
#include <limits>

namespace spcagan::adversarial {

std::string to_string(AttackKind k) { return k == AttackKind::FGSM ? "FGSM" : "DF"; }

std::optional<AttackKind> parse_attack(std::string_view s) {
  if (s == "FGSM") return AttackKind::FGSM;
  if (s == "DF" || s == "DEEPFOOL") return AttackKind::DEEPFOOL;
  return std::nullopt;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw Error(ErrorKind::Spec, "attack epsilon must be >= 0");
  if (max_iter < 1) throw Error(ErrorKind::Spec, "attack max_iter must be >= 1");
  if (!(overshoot >= 0.0)) throw Error(ErrorKind::Spec, "attack overshoot must be >= 0");
  if (surrogate_epochs < 1) throw Error(ErrorKind::Spec, "surrogate_epochs must be >= 1");
}

namespace {

void check_shape(const detect::Differentiable& model, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
    throw Error(ErrorKind::Range, "attack input has " + std::to_string(x.cols()) + " columns, model expects " +
                                      std::to_string(model.input_dim()));
  }
}

int argmax_row(const RowVector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < v.size(); ++j) {
    if (v(j) > v(best)) best = j;
  }
  return static_cast<int>(best);
}

}  // namespace

Matrix fgsm(const detect::Differentiable& model, const Matrix& x, const Labels& y, double epsilon) {
  check_shape(model, x);
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error(ErrorKind::Range, "fgsm: rows and labels differ");
  if (!(epsilon >= 0.0)) throw Error(ErrorKind::Range, "fgsm: epsilon must be >= 0");
  if (epsilon == 0.0 || x.rows() == 0) return x;
  // The loss is -mean log p(y); its gradient is the VJP of -onehot / N.
  Matrix up = -one_hot(y, static_cast<int>(model.n_classes())) / static_cast<double>(x.rows());
  const Matrix g = model.input_vjp(x, up);
  return x + epsilon * g.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
}

DeepFoolResult deepfool(const detect::Differentiable& model, const Matrix& x, std::size_t max_iter, double overshoot,
                        const std::optional<Labels>& reference) {
  check_shape(model, x);
  if (reference && reference->size() != static_cast<std::size_t>(x.rows())) {
    throw Error(ErrorKind::Range, "deepfool: reference labels and rows differ");
  }
  const auto n = x.rows();
  const auto c = static_cast<Eigen::Index>(model.n_classes());
  DeepFoolResult res;
  res.adversarial = x;
  res.raw = Matrix::Zero(n, x.cols());
  res.flipped.assign(static_cast<std::size_t>(n), false);
  res.iterations.assign(static_cast<std::size_t>(n), 0);

  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix x0 = x.row(i);
    const int k0 = reference ? (*reference)[static_cast<std::size_t>(i)] : argmax_row(model.log_probs(x0).row(0));
    RowVector r = RowVector::Zero(x.cols());
    Matrix xi = x0;
    std::size_t it = 0;
    bool flipped = argmax_row(model.log_probs(xi).row(0)) != k0;
    while (!flipped && it < max_iter) {
      const RowVector f = model.log_probs(xi).row(0);
      // Gradient of every class score at xi.
      Matrix grads(c, x.cols());
      for (Eigen::Index k = 0; k < c; ++k) {
        Matrix up = Matrix::Zero(1, c);
        up(0, k) = 1.0;
        grads.row(k) = model.input_vjp(xi, up).row(0);
      }
      double best = std::numeric_limits<double>::infinity();
      RowVector step;
      for (Eigen::Index k = 0; k < c; ++k) {
        if (k == k0) continue;
        const RowVector w = grads.row(k) - grads.row(k0);
        const double wn = w.norm();
        if (wn == 0.0) continue;
        const double dist = std::abs(f(k) - f(k0)) / wn;
        if (dist < best) {
          best = dist;
          step = (std::abs(f(k) - f(k0)) / (wn * wn)) * w;
        }
      }
      if (!std::isfinite(best)) break;  // flat scores: no direction to follow
      r += step;
      ++it;
      xi = x0 + (1.0 + overshoot) * r;
      flipped = argmax_row(model.log_probs(xi).row(0)) != k0;
    }
    res.raw.row(i) = r;
    res.adversarial.row(i) = x0 + (1.0 + overshoot) * r;
    res.flipped[static_cast<std::size_t>(i)] = flipped;
    res.iterations[static_cast<std::size_t>(i)] = it;
  }
  return res;
}

RobustnessReport robustness_eval(const detect::Detector& target, const features::FeatureMatrix& test,
                                 const AttackConfig& cfg) {
  cfg.validate();
  test.validate();
  const auto n_classes = target.n_classes();
  std::vector<std::size_t> mal;
  std::vector<std::size_t> per_class(n_classes, 0);
  for (std::size_t i = 0; i < test.labels.size(); ++i) {
    const auto l = static_cast<std::size_t>(test.labels[i]);
    if (l >= n_classes) throw Error(ErrorKind::Range, "test label outside the detector's classes");
    ++per_class[l];
    if (l > 0) mal.push_back(i);
  }
  for (std::size_t s = 1; s < n_classes; ++s) {
    if (per_class[s] == 0) {
      throw Error(ErrorKind::Input, "test split has no rows of scenario " + std::to_string(s));
    }
  }

  // With a single scenario the malicious rows alone form one class, so the
  // surrogate also sees the normal test rows.
  const auto surrogate_rows = n_classes > 2 ? mal : [&] {
    std::vector<std::size_t> all(test.labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }();
  const auto sub = test.select_rows(surrogate_rows);
  detect::DetectorConfig sc;
  sc.kind = detect::Kind::MLP;
  sc.n_classes = n_classes;
  sc.feature_dim = test.cols();
  sc.hidden = cfg.surrogate_hidden;
  sc.epochs = cfg.surrogate_epochs;
  sc.batch_size = 32;
  sc.seed = derive_seed(cfg.seed, 500);
  auto surrogate = detect::Detector::build(sc);
  surrogate.fit(sub.values, sub.labels);

  const auto malicious = test.select_rows(mal);
  RobustnessReport rep;
  rep.attack = cfg;
  Matrix adv;
  std::vector<bool> counted(mal.size(), true);
  if (cfg.kind == AttackKind::FGSM) {
    adv = fgsm(surrogate, malicious.values, malicious.labels, cfg.epsilon);
  } else {
    auto df = deepfool(surrogate, malicious.values, cfg.max_iter, cfg.overshoot, malicious.labels);
    adv = std::move(df.adversarial);
    counted = df.flipped;
  }
  const Matrix delta = adv - malicious.values;
  std::size_t used = 0;
  for (std::size_t i = 0; i < mal.size(); ++i) {
    if (!counted[i]) {
      ++rep.unflipped_rows;
      continue;
    }
    const auto row = delta.row(static_cast<Eigen::Index>(i));
    rep.mean_perturbation_linf += row.size() ? row.cwiseAbs().maxCoeff() : 0.0;
    rep.mean_perturbation_l2 += row.norm();
    ++used;
  }
  if (used > 0) {
    rep.mean_perturbation_linf /= static_cast<double>(used);
    rep.mean_perturbation_l2 /= static_cast<double>(used);
  }

  const auto eval_seed = derive_seed(cfg.seed, 501);
  rep.clean_report = detect::evaluate(target.predict(test.values, eval_seed), test.labels);

  Matrix injected(test.values.rows() + adv.rows(), test.values.cols());
  injected << test.values, adv;
  Labels labels = test.labels;
  labels.insert(labels.end(), static_cast<std::size_t>(adv.rows()), 0);
  rep.injected_rows = static_cast<std::size_t>(adv.rows());
  rep.attacked_report = detect::evaluate(target.predict(injected, eval_seed), labels);
  return rep;
}

}  // namespace spcagan::adversarial
