#pragma once

#include <string>
#include <vector>

#include "kexp/attention.hpp"
#include "kexp/nn.hpp"

namespace kexp {

enum class AttentionKind { None, SE, CBAM };

std::string to_string(AttentionKind a);
AttentionKind attention_from_string(const std::string& s);

// Class index assignment is fixed: 0 = happy, 1 = sad.
inline constexpr int kClassHappy = 0;
inline constexpr int kClassSad = 1;
inline const char* const kClassNames[2] = {"happy", "sad"};

struct ModelConfig {
  bool use_batchnorm = false;
  bool use_dropout = false;
  AttentionKind attention = AttentionKind::None;
  std::array<int64_t, 2> dense_widths{128, 64};
  std::array<float, 3> dropout_rates{0.25f, 0.5f, 0.5f};  // spatial, head1, head2
  int input_size = 224;
  int num_classes = 2;
  int attention_reduction = 2;
  uint64_t seed = 0;

  void validate() const;
};

// The two-stage convolutional classifier:
//   Conv(3->5,k3) [BN] ReLU Pool [attention] Conv(5->11,k3) [BN] ReLU Pool
//   [Dropout] Flatten Dense+ReLU [Dropout] Dense+ReLU [Dropout] Dense
// Bracketed stages exist only when the config enables them.
template <typename T>
struct ExpressionNetT {
  ModelConfig config;
  std::vector<LayerPtr<T>> layers;
  std::vector<std::string> layer_names;
  int gradcam_layer = -1;  // index of the second conv stage's ReLU
  int64_t flat_features = 0;

  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode);
  Tensor4T<T> backward(const Tensor4T<T>& dlogits);
  void zero_grads();
  double kink_margin() const;

  // All trainable tensors, names prefixed with the owning layer.
  std::vector<ParamRef<T>> params();
  // Non-trainable checkpoint state (batch-norm running stats).
  std::vector<ParamRef<T>> buffers();
  // Stochastic layers (name, generator) for checkpointing.
  std::vector<std::pair<std::string, Rng*>> rngs();
};

using ExpressionNet = ExpressionNetT<float>;
using ExpressionNetd = ExpressionNetT<double>;

template <typename T>
ExpressionNetT<T> build_model(const ModelConfig& config);

template <typename T>
int64_t count_params(ExpressionNetT<T>& net);

// Raw class scores for a batch shaped [n, 3, input_size, input_size].
template <typename T>
Tensor4T<T> forward_logits(ExpressionNetT<T>& net, const Tensor4T<T>& batch,
                           Mode mode);

template <typename T>
std::vector<int> predict(ExpressionNetT<T>& net, const Tensor4T<T>& batch);

struct ExperimentSpec {
  std::string name;
  ModelConfig config;
};

// The eight ablation configurations, in their canonical order.
std::vector<ExperimentSpec> experiment_configs(const ModelConfig& base);
std::vector<ExperimentSpec> experiment_configs();

// Class-activation heatmap: gradients of the target logit w.r.t. the second
// conv stage's post-ReLU maps, channel-weighted, ReLU-rectified, bilinearly
// upsampled to the input size and max-normalized into [0,1].
// Returns [1, 1, input_size, input_size].
template <typename T>
Tensor4T<T> grad_cam(ExpressionNetT<T>& net, const Tensor4T<T>& image,
                     int target_class);

}  // namespace kexp
