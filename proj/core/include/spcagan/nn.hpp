#pragma once

#include "spcagan/common.hpp"

#include <memory>
#include <string>
#include <vector>

// Minimal dense/conv network toolkit with hand-written backward passes.
// Activations are row-major batches: one sample per row.
namespace spcagan::nn {

enum class Pass {
  Train,       // dropout active, Bayesian weights sampled
  Eval,        // deterministic
  MonteCarlo,  // dropout active with one mask shared by all rows
};

struct Param {
  std::string name;
  Matrix value;
};

// Per-layer scratch written by forward and read by backward.
struct Cache {
  Matrix a, b, c;
  std::vector<Eigen::Index> idx;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string kind() const = 0;
  virtual std::size_t out_dim() const = 0;

  virtual Matrix forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const = 0;
  // Adds parameter gradients into `grads` (aligned with params()) and returns
  // the gradient with respect to the input.
  virtual Matrix backward(const Matrix& dy, const Cache& cache, Matrix* grads) const = 0;

  virtual std::vector<Param*> params() { return {}; }

  // KL(q || N(0, 1)) for Bayesian layers; 0 otherwise.
  virtual double kl() const { return 0.0; }
  virtual void add_kl_grad(Matrix* /*grads*/, double /*scale*/) const {}
};

class Dense : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, Rng& rng);
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  std::string kind() const override { return "dense"; }
  std::size_t out_dim() const override { return static_cast<std::size_t>(w_.value.cols()); }
  Matrix forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const override;
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix* grads) const override;
  std::vector<Param*> params() override { return {&w_, &b_}; }

  const Matrix& weight() const { return w_.value; }
  const Matrix& bias() const { return b_.value; }
  Matrix& weight() { return w_.value; }
  Matrix& bias() { return b_.value; }

 private:
  Param w_{"W", {}};  // in x out
  Param b_{"b", {}};  // 1 x out
};

class LeakyReLU : public Layer {
 public:
  LeakyReLU(std::size_t dim, double slope) : dim_(dim), slope_(slope) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyReLU>(*this); }
  std::string kind() const override { return "leaky_relu"; }
  std::size_t out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const override;
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix* grads) const override;
  double slope() const { return slope_; }

 private:
  std::size_t dim_;
  double slope_;
};

class Dropout : public Layer {
 public:
  Dropout(std::size_t dim, double rate);
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }
  std::string kind() const override { return "dropout"; }
  std::size_t out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const override;
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix* grads) const override;
  double rate() const { return rate_; }

 private:
  std::size_t dim_;
  double rate_;
};

// 1-D convolution, kernel 3, stride 1, zero "same" padding. Rows hold
// length x channels values, position-major (index = pos * channels + ch).
class Conv1D : public Layer {
 public:
  Conv1D(std::size_t length, std::size_t in_channels, std::size_t out_channels, Rng& rng);
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1D>(*this); }
  std::string kind() const override { return "conv1d"; }
  std::size_t out_dim() const override { return length_ * out_ch_; }
  Matrix forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const override;
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix* grads) const override;
  std::vector<Param*> params() override { return {&w_, &b_}; }

  static constexpr std::size_t kKernel = 3;

 private:
  Matrix im2col(const Matrix& x) const;
  std::size_t length_, in_ch_, out_ch_;
  Param w_{"W", {}};  // (kernel * in_ch) x out_ch
  Param b_{"b", {}};  // 1 x out_ch
};

// Non-overlapping max pooling of width 2 along the position axis.
class MaxPool1D : public Layer {
 public:
  MaxPool1D(std::size_t length, std::size_t channels) : length_(length), ch_(channels) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool1D>(*this); }
  std::string kind() const override { return "maxpool1d"; }
  std::size_t out_dim() const override { return (length_ / 2) * ch_; }
  Matrix forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const override;
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix* grads) const override;

 private:
  std::size_t length_, ch_;
};

// Mean-field Gaussian weights with the reparameterization trick and a
// standard-normal prior. Weights are sampled in Train passes, and in
// MonteCarlo passes when sample_at_predict is set; otherwise the posterior
// mean is used.
class BayesDense : public Layer {
 public:
  BayesDense(std::size_t in, std::size_t out, Rng& rng, double init_logvar = -9.0);
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BayesDense>(*this); }
  std::string kind() const override { return "bayes_dense"; }
  std::size_t out_dim() const override { return static_cast<std::size_t>(w_mu_.value.cols()); }
  Matrix forward(const Matrix& x, Cache& cache, Pass pass, Rng* rng) const override;
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix* grads) const override;
  std::vector<Param*> params() override { return {&w_mu_, &w_logvar_, &b_mu_, &b_logvar_}; }
  double kl() const override;
  void add_kl_grad(Matrix* grads, double scale) const override;

  bool sample_at_predict = false;

 private:
  Param w_mu_{"W_mu", {}}, w_logvar_{"W_logvar", {}};
  Param b_mu_{"b_mu", {}}, b_logvar_{"b_logvar", {}};
};

struct Tape {
  std::vector<Cache> caches;
};

class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::size_t in_dim) : in_dim_(in_dim) {}
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return layers_.empty() ? in_dim_ : layers_.back()->out_dim(); }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  Matrix forward(const Matrix& x, Tape& tape, Pass pass, Rng* rng) const;
  Matrix predict(const Matrix& x, Pass pass = Pass::Eval, Rng* rng = nullptr) const;
  // Accumulates into grads (see zero_grads) and returns d(loss)/d(input).
  Matrix backward(const Matrix& dy, const Tape& tape, std::vector<Matrix>& grads) const;

  // Parameters flattened across layers, named "<layer>.<param>".
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::vector<std::string> param_names() const;
  std::vector<Matrix> zero_grads() const;
  std::size_t param_count() const;

  double kl() const;
  void add_kl_grad(std::vector<Matrix>& grads, double scale) const;

 private:
  std::size_t in_dim_ = 0;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Dense + LeakyReLU hidden stack followed by a linear Dense output.
Sequential mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, double slope, Rng& rng);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(const std::vector<Param*>& params, const std::vector<Matrix>& grads);
  std::size_t steps() const { return t_; }
  double lr() const { return lr_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Numerics ---------------------------------------------------------------

Matrix softmax(const Matrix& logits);
Matrix log_softmax(const Matrix& logits);
Matrix sigmoid(const Matrix& x);
// log(sigmoid(x)) computed without overflow.
Matrix log_sigmoid(const Matrix& x);

// Mean cross-entropy of integer labels; gradient w.r.t. logits in dlogits.
double cross_entropy(const Matrix& logits, const Labels& labels, Matrix* dlogits);

}  // namespace spcagan::nn
