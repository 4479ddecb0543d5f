#pragma once

#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kexp/rng.hpp"
#include "kexp/tensor.hpp"

namespace kexp {

enum class Mode { Train, Eval };

// Lightweight handle into a layer's named tensors; used by the optimizer,
// the checkpoint writer and the gradient checker.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor4T<T>* value = nullptr;
  Tensor4T<T>* grad = nullptr;  // null for non-trainable buffers
};

// One network stage with an explicit forward/backward pair. Forward caches
// whatever backward needs; backward may be called at most once per forward.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;

  virtual Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) = 0;
  virtual Tensor4T<T> backward(const Tensor4T<T>& dy) = 0;

  // Trainable parameters with names local to the layer ("weight", "gamma"...).
  virtual std::vector<ParamRef<T>> params() { return {}; }
  // Non-trainable state that still belongs in checkpoints (running stats).
  virtual std::vector<ParamRef<T>> buffers() { return {}; }
  // Layers that consume randomness expose their generator for checkpointing
  // and for mask-freezing during gradient checks.
  virtual Rng* rng() { return nullptr; }

  // Distance from the last forward's internal state to the nearest
  // nondifferentiable point (ReLU zero crossings, pooling ties). Finite
  // difference checks resample inputs whose margin is too small.
  virtual double kink_margin() const { return std::numeric_limits<double>::infinity(); }

  void zero_grads() {
    for (auto& p : params())
      if (p.grad) p.grad->zero();
  }

 protected:
  void require_cache(bool have, const char* who) const {
    if (!have)
      throw ContractError(std::string(who) +
                          ": backward called without a cached forward");
  }
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

// He-normal init for weight tensors, zero biases.
template <typename T>
void he_init(Tensor4T<T>& w, int64_t fan_in, Rng& rng);

// ---- layers ----------------------------------------------------------------

// 2-D convolution, stride 1, square kernel, optional zero padding.
// y = W (*) x + b via im2col + matmul.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int64_t in_channels, int64_t out_channels, int kernel, Rng& init_rng,
         int pad = 0);

  std::string kind() const override { return "conv"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  std::vector<ParamRef<T>> params() override;

  const Tensor4T<T>& weight() const { return weight_; }
  Tensor4T<T>& weight() { return weight_; }
  Tensor4T<T>& bias() { return bias_; }

  int64_t in_channels() const { return in_channels_; }
  int64_t out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }

 private:
  int64_t in_channels_, out_channels_;
  int kernel_, pad_;
  Tensor4T<T> weight_, weight_grad_;  // [cout, cin, k, k]
  Tensor4T<T> bias_, bias_grad_;      // [1, cout, 1, 1]
  Tensor4T<T> cols_;                  // cached im2col of the last input
  std::array<int64_t, 4> x_shape_{};
  bool have_cache_ = false;
};

// Per-channel batch normalization with running statistics for eval mode.
template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  explicit BatchNorm2d(int64_t channels, T epsilon = T(1e-5),
                       T ema_momentum = T(0.1));

  std::string kind() const override { return "batchnorm"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  std::vector<ParamRef<T>> params() override;
  std::vector<ParamRef<T>> buffers() override;

  Tensor4T<T>& gamma() { return gamma_; }
  Tensor4T<T>& beta() { return beta_; }
  Tensor4T<T>& running_mean() { return running_mean_; }
  Tensor4T<T>& running_var() { return running_var_; }
  T epsilon() const { return epsilon_; }

 private:
  int64_t channels_;
  T epsilon_, ema_momentum_;
  Tensor4T<T> gamma_, gamma_grad_, beta_, beta_grad_;
  Tensor4T<T> running_mean_, running_var_;
  // cache
  Tensor4T<T> x_hat_;
  std::vector<double> inv_std_;
  Mode cached_mode_ = Mode::Train;
  bool have_cache_ = false;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  double kink_margin() const override;

 private:
  Tensor4T<T> x_;
  bool have_cache_ = false;
};

// 2x2 max pooling, stride 2; trailing odd row/column dropped. Ties go to the
// first element in row-major scan order.
template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  std::string kind() const override { return "maxpool"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  double kink_margin() const override { return kink_margin_; }

 private:
  std::array<int64_t, 4> x_shape_{};
  std::vector<int64_t> argmax_;  // flat input offset per output element
  double kink_margin_ = std::numeric_limits<double>::infinity();
  bool have_cache_ = false;
};

enum class Activation { None, ReLU };

// Fully connected layer on matrices [n, din] -> [n, dout], with an optional
// fused ReLU (the head's activations live inside their dense layers).
template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(int64_t in_features, int64_t out_features, Rng& init_rng,
        Activation act = Activation::None);

  std::string kind() const override { return "dense"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  std::vector<ParamRef<T>> params() override;

  Tensor4T<T>& weight() { return weight_; }
  Tensor4T<T>& bias() { return bias_; }
  int64_t in_features() const { return in_features_; }
  int64_t out_features() const { return out_features_; }
  double kink_margin() const override;

 private:
  int64_t in_features_, out_features_;
  Activation act_;
  Tensor4T<T> weight_, weight_grad_;  // [din, dout]
  Tensor4T<T> bias_, bias_grad_;      // [1, dout]
  Tensor4T<T> x_, pre_;
  bool have_cache_ = false;
};

// Inverted dropout: train-time masking scaled by 1/(1-p), eval is identity.
template <typename T>
class Dropout : public Layer<T> {
 public:
  Dropout(T rate, Rng rng);

  std::string kind() const override { return "dropout"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  Rng* rng() override { return &rng_; }

  T rate() const { return rate_; }

 private:
  T rate_;
  Rng rng_;
  Tensor4T<T> scaled_mask_;  // 0 or 1/(1-p) per element
  bool eval_pass_ = false;
  bool have_cache_ = false;
};

// [n,c,h,w] -> [n, c*h*w]; row-major, bijective.
template <typename T>
class Flatten : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;

 private:
  std::array<int64_t, 4> x_shape_{};
  bool have_cache_ = false;
};

// ---- loss -------------------------------------------------------------------

template <typename T>
struct LossResult {
  double loss = 0.0;          // mean over the batch
  Tensor4T<T> dlogits;        // (softmax - onehot) / n
};

// Softmax cross-entropy on logits [n, num_classes]; labels are class indices.
template <typename T>
LossResult<T> softmax_xent(const Tensor4T<T>& logits, const std::vector<int>& labels);

// Row-wise softmax probabilities (max-subtracted for stability).
template <typename T>
Tensor4T<T> softmax(const Tensor4T<T>& logits);

}  // namespace kexp
