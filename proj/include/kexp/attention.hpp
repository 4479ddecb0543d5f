#pragma once

#include "kexp/nn.hpp"

namespace kexp {

// Squeeze-and-Excitation: global average pool -> bottleneck MLP -> sigmoid,
// output rescales each channel of the input.
template <typename T>
class SEBlock : public Layer<T> {
 public:
  SEBlock(int64_t channels, int reduction, Rng& init_rng);

  std::string kind() const override { return "se"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  std::vector<ParamRef<T>> params() override;
  double kink_margin() const override { return fc1_.kink_margin(); }

  int64_t hidden() const { return hidden_; }

 private:
  int64_t channels_, hidden_;
  Dense<T> fc1_;  // c -> hidden, fused ReLU
  Dense<T> fc2_;  // hidden -> c, sigmoid applied here
  Tensor4T<T> x_, weights_;  // weights_: [n, c] channel scales
  bool have_cache_ = false;
};

// CBAM: channel attention (shared MLP over avg- and max-pooled descriptors)
// followed by spatial attention (7x7 conv over channel-pooled maps).
template <typename T>
class CBAM : public Layer<T> {
 public:
  CBAM(int64_t channels, int reduction, Rng& init_rng, int spatial_kernel = 7);

  std::string kind() const override { return "cbam"; }
  Tensor4T<T> forward(const Tensor4T<T>& x, Mode mode) override;
  Tensor4T<T> backward(const Tensor4T<T>& dy) override;
  std::vector<ParamRef<T>> params() override;
  double kink_margin() const override { return kink_margin_; }

 private:
  int64_t channels_, hidden_;
  // Shared channel MLP, used twice per forward so the weights are raw
  // tensors rather than Dense sublayers.
  Tensor4T<T> w1_, w1_grad_;  // [c, hidden]
  Tensor4T<T> b1_, b1_grad_;  // [1, hidden]
  Tensor4T<T> w2_, w2_grad_;  // [hidden, c]
  Tensor4T<T> b2_, b2_grad_;  // [1, c]
  Conv2d<T> spatial_conv_;    // 2 -> 1, k x k, padding preserves shape

  // forward cache
  Tensor4T<T> x_, xc_;                    // input, channel-scaled intermediate
  Tensor4T<T> gap_, gmp_;                 // [n, c]
  Tensor4T<T> h_avg_pre_, h_max_pre_;     // [n, hidden] pre-ReLU
  Tensor4T<T> mc_;                        // [n, c] channel attention
  Tensor4T<T> ms_;                        // [n, 1, h, w] spatial attention
  Tensor4T<T> pooled_;                    // [n, 2, h, w]
  std::vector<int64_t> gmp_argmax_;       // per (n, c): flat spatial index
  std::vector<int64_t> maxc_argmax_;      // per (n, y, x): channel index
  double kink_margin_ = 0.0;
  bool have_cache_ = false;

  Tensor4T<T> mlp_forward(const Tensor4T<T>& in, Tensor4T<T>& pre_cache);
  Tensor4T<T> mlp_backward(const Tensor4T<T>& dout, const Tensor4T<T>& in,
                           const Tensor4T<T>& pre_cache);
};

template <typename T>
T sigmoid(T x);

}  // namespace kexp
