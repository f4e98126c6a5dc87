#pragma once

#include "spcagan/common.hpp"
#include "spcagan/detect.hpp"
#include "spcagan/features.hpp"

#include <optional>
#include <string>
#include <vector>

namespace spcagan::adversarial {

enum class AttackKind { FGSM, DEEPFOOL };

// "FGSM" / "DF" (the labels used in result tables); parse also accepts "DEEPFOOL".
std::string to_string(AttackKind k);
std::optional<AttackKind> parse_attack(std::string_view s);

struct AttackConfig {
  AttackKind kind = AttackKind::FGSM;
  double epsilon = 0.1;
  std::size_t max_iter = 50;
  double overshoot = 0.02;
  std::uint64_t seed = 0;
  // Surrogate target trained on the malicious test rows.
  std::vector<std::size_t> surrogate_hidden{64, 32};
  std::size_t surrogate_epochs = 100;

  void validate() const;
};

// X + epsilon * sign(grad_X of the mean cross-entropy at labels y).
Matrix fgsm(const detect::Differentiable& model, const Matrix& x, const Labels& y, double epsilon);

struct DeepFoolResult {
  Matrix adversarial;           // x + (1 + overshoot) * raw
  Matrix raw;                   // accumulated perturbation before overshoot
  std::vector<bool> flipped;    // prediction left the reference class
  std::vector<std::size_t> iterations;
};

// Multiclass DeepFool on log-probability scores. The reference class of each
// row is `reference` when given, else the model's clean prediction; a row
// whose prediction already differs from it is returned unchanged.
DeepFoolResult deepfool(const detect::Differentiable& model, const Matrix& x, std::size_t max_iter, double overshoot,
                        const std::optional<Labels>& reference = std::nullopt);

struct RobustnessReport {
  detect::ClassificationReport clean_report;
  detect::ClassificationReport attacked_report;
  AttackConfig attack;
  double mean_perturbation_linf = 0;
  double mean_perturbation_l2 = 0;
  std::size_t injected_rows = 0;
  std::size_t unflipped_rows = 0;  // DeepFool rows excluded from the means
};

// Surrogate-based protocol: train an MLP on the malicious test rows, attack
// those rows against it, relabel the adversarial copies as normal, inject
// them into the test set and evaluate `target` on clean and injected sets.
RobustnessReport robustness_eval(const detect::Detector& target, const features::FeatureMatrix& test,
                                 const AttackConfig& cfg);

}  // namespace spcagan::adversarial
