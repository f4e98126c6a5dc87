#pragma once

#include "spcagan/checkpoint.hpp"
#include "spcagan/common.hpp"
#include "spcagan/nn.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spcagan::gan {

enum class Mode { CGAN, ACGAN, CWGANGP, SPCAGAN };

std::string to_string(Mode m);
std::optional<Mode> parse_mode(std::string_view s);

struct GanConfig {
  Mode mode = Mode::SPCAGAN;
  std::size_t latent_dim = 64;
  std::size_t n_classes = 2;
  std::size_t feature_dim = 0;
  std::vector<std::size_t> gen_hidden{32, 64, 64, 128, 512, 1024};
  std::vector<std::size_t> disc_hidden;  // empty = reverse of gen_hidden
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 300;
  double leaky_slope = 0.2;
  double spca_weight = 1.0;
  std::size_t spca_k = 2;
  double gp_weight = 10.0;
  std::size_t critic_steps = 5;     // CWGANGP critic updates per generator update
  std::size_t trace_samples = 512;  // rows per side for the per-epoch SPCA trace
  std::uint64_t seed = 0;

  std::vector<std::size_t> effective_disc_hidden() const;
  void validate() const;
  std::string to_json() const;
  static GanConfig from_json(const std::string& text);
};

struct LossBundle {
  double l_source = 0;  // mean log D(real) + mean log(1 - D(fake)); critic gap for CWGANGP
  double l_class = 0;   // mean log P(true class) over real and fake batches
  double l_spca = 0;    // k - SPCA(real batch, fake batch)
  double total_g = 0;   // minimized generator objective
  double total_d = 0;   // minimized discriminator objective
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossBundle loss;
  double spca_trace = 0;  // SPCA(real sample, generated sample, spca_k); NaN if undefined
};

// Discriminator: a Dense/LeakyReLU trunk plus a source head (logit) and, for
// ACGAN and SPCAGAN, a class head (logits). CGAN and CWGANGP feed the one-hot
// label alongside x and have no class head.
struct Discriminator {
  nn::Sequential trunk;
  nn::Sequential source_head;
  nn::Sequential class_head;  // empty for CGAN / CWGANGP

  bool conditional_input() const { return class_head.size() == 0; }
};

struct GanModel {
  GanConfig config;
  nn::Sequential generator;
  Discriminator discriminator;
  std::vector<EpochRecord> history;
  std::size_t spca_skips = 0;

  static GanModel init(const GanConfig& cfg);

  // Rows drawn from G(z, one-hot(class_id)), z ~ N(0, I).
  Matrix sample(int class_id, std::size_t n, std::uint64_t seed) const;
  Matrix generate(const Matrix& z, const Labels& labels) const;

  // Source probabilities (sigmoid; raw critic scores for CWGANGP) and class
  // probabilities (softmax; empty when there is no class head).
  Vector source_prob(const Matrix& x, const Labels& labels) const;
  Matrix class_prob(const Matrix& x) const;

  void save(const std::filesystem::path& path) const;
  static GanModel load(const std::filesystem::path& path);
};

// Loss terms as written (not negated). Probabilities are clamped to [1e-7, 1-1e-7].
double source_loss(const Vector& d_real_prob, const Vector& d_fake_prob);
double class_loss(const Matrix& probs_real, const Labels& labels_real, const Matrix& probs_fake,
                  const Labels& labels_fake);

struct SpcaTerm {
  double value = 0;  // k - SPCA(real, fake)
  Matrix grad;       // d value / d fake
  bool skipped = false;
  std::string reason;
};

// k - SPCA between the batches with its gradient with respect to the fake
// batch (real loadings held constant). Skips when an eigen-gap between
// components k and k+1 falls below 1e-9.
SpcaTerm spca_regularizer(const Matrix& x_real, const Matrix& x_fake, std::size_t k, bool with_grad = true);

// mean (||grad_x critic(x_interp)|| - 1)^2 for a critic built only from Dense
// and LeakyReLU layers with a scalar output. When `cond` is non-empty it is
// appended to every interpolate and excluded from the gradient norm. When
// `grads` is given, the penalty's parameter gradient is added to it.
double gradient_penalty(const nn::Sequential& critic, const Matrix& x_real, const Matrix& x_fake, const Matrix& cond,
                        Rng& rng, std::vector<Matrix>* grads = nullptr);
// Same quantity at fixed interpolation points.
double gradient_penalty_at(const nn::Sequential& critic, const Matrix& x_interp, const Matrix& cond,
                           std::vector<Matrix>* grads = nullptr);

class GanTrainer {
 public:
  GanTrainer(const Matrix& x, const Labels& y, const GanConfig& cfg);

  // One minibatch: discriminator update(s) then one generator update.
  LossBundle step();
  // Completes the current epoch and records its history entry.
  EpochRecord run_epoch();
  GanModel train();

  const GanModel& model() const { return model_; }
  std::size_t steps_taken() const { return steps_; }

 private:
  void begin_epoch();
  Matrix batch_rows(const std::vector<std::size_t>& idx) const;
  Labels batch_labels(const std::vector<std::size_t>& idx) const;
  Matrix latent(std::size_t n);
  double spca_trace();

  Matrix x_;
  Labels y_;
  GanModel model_;
  nn::Adam opt_g_, opt_d_trunk_, opt_d_source_, opt_d_class_;
  Rng rng_, trace_rng_;
  std::vector<std::size_t> order_;
  std::size_t batch_in_epoch_ = 0, batches_per_epoch_ = 0, epoch_ = 0, steps_ = 0;
  LossBundle epoch_sum_;
  std::size_t epoch_batches_ = 0;
  std::vector<std::size_t> trace_rows_;
};

GanModel train(const Matrix& x, const Labels& y, const GanConfig& cfg);

void write_history_csv(const GanModel& model, const std::filesystem::path& path,
                       const std::vector<std::string>& comment_lines = {});

}  // namespace spcagan::gan
