#pragma once

#include "spcagan/common.hpp"
#include "spcagan/features.hpp"
#include "spcagan/nn.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spcagan::detect {

enum class Kind { MLP, CNN1D, BNN, ENSEMBLE, HYBRID };

std::string to_string(Kind k);
std::optional<Kind> parse_kind(std::string_view s);

struct DetectorConfig {
  Kind kind = Kind::HYBRID;
  std::size_t n_classes = 2;
  std::size_t feature_dim = 0;
  std::vector<std::size_t> hidden{64, 32};
  double dropout_rate = 0.3;
  std::size_t mc_samples = 30;
  double kl_weight = 1.0;
  std::size_t epochs = 40;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static DetectorConfig from_json(const std::string& text);
};

// Smallest feature_dim admitted by the two conv/pool blocks.
inline constexpr std::size_t kMinCnnFeatures = 4;

struct Prediction {
  Matrix class_probs;
  Labels predicted;
  Vector uncertainty;
};

struct ClassificationReport {
  double precision = 0, recall = 0, f1 = 0, kappa = 0, mcc = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
};

// Row-wise argmax, ties toward the lower index.
Labels argmax(const Matrix& probs);

ClassificationReport evaluate(const Labels& predicted, const Labels& truth, std::size_t n_classes);
ClassificationReport evaluate(const Prediction& pred, const Labels& truth);
ClassificationReport report_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

// A classifier whose log class probabilities are differentiable in the input.
class Differentiable {
 public:
  virtual ~Differentiable() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t n_classes() const = 0;
  // Deterministic pass (no dropout, posterior-mean weights).
  virtual Matrix log_probs(const Matrix& x) const = 0;
  // Gradient of sum(upstream .* log_probs(x)) with respect to x.
  virtual Matrix input_vjp(const Matrix& x, const Matrix& upstream) const = 0;
};

// Wraps a network that emits class logits.
class LogitModel : public Differentiable {
 public:
  explicit LogitModel(nn::Sequential net) : net_(std::move(net)) {}
  std::size_t input_dim() const override { return net_.in_dim(); }
  std::size_t n_classes() const override { return net_.out_dim(); }
  Matrix log_probs(const Matrix& x) const override;
  Matrix input_vjp(const Matrix& x, const Matrix& upstream) const override;
  const nn::Sequential& net() const { return net_; }

 private:
  nn::Sequential net_;
};

class Detector : public Differentiable {
 public:
  static Detector build(const DetectorConfig& cfg);

  const DetectorConfig& config() const { return cfg_; }
  std::size_t input_dim() const override { return cfg_.feature_dim; }
  std::size_t n_classes() const override { return cfg_.n_classes; }
  std::size_t param_count() const;
  const std::vector<double>& loss_history() const { return loss_history_; }
  // Per-epoch KL term (BNN and HYBRID).
  const std::vector<double>& kl_history() const { return kl_history_; }

  void fit(const Matrix& x, const Labels& y);
  void fit(const features::FeatureMatrix& train) { fit(train.values, train.labels); }

  // Stochastic kinds average mc_samples passes drawn from `seed` (default:
  // derived from the config seed); deterministic kinds use one pass.
  Prediction predict(const Matrix& x, std::optional<std::uint64_t> seed = std::nullopt) const;

  Matrix log_probs(const Matrix& x) const override;
  Matrix input_vjp(const Matrix& x, const Matrix& upstream) const override;

  bool stochastic() const { return cfg_.kind == Kind::BNN || cfg_.kind == Kind::HYBRID; }

  void save(const std::filesystem::path& path) const;
  static Detector load(const std::filesystem::path& path);

  // MLP/CNN1D/BNN: {net}; ENSEMBLE: {mlp, cnn}; HYBRID: {mlp branch, cnn branch, head}.
  const std::vector<nn::Sequential>& nets() const { return nets_; }

 private:
  struct Forward;
  Matrix logits_single(std::size_t i, const Matrix& x, nn::Pass pass, Rng* rng) const;
  Matrix hybrid_logits(const Matrix& x, nn::Pass pass, Rng* rng, Forward* fw) const;
  Matrix probs_once(const Matrix& x, nn::Pass pass, Rng* rng) const;
  void fit_net(std::size_t which, const Matrix& x, const Labels& y, std::uint64_t seed, bool record);
  void fit_hybrid(const Matrix& x, const Labels& y);

  DetectorConfig cfg_;
  std::vector<nn::Sequential> nets_;
  std::vector<double> loss_history_, kl_history_;
};

}  // namespace spcagan::detect
