#include "kexp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kexp {

std::string to_string(AttentionKind a) {
  switch (a) {
    case AttentionKind::None: return "none";
    case AttentionKind::SE: return "se";
    case AttentionKind::CBAM: return "cbam";
  }
  return "none";
}

AttentionKind attention_from_string(const std::string& s) {
  if (s == "none") return AttentionKind::None;
  if (s == "se") return AttentionKind::SE;
  if (s == "cbam") return AttentionKind::CBAM;
  throw ConfigError("unknown attention kind '" + s + "' (none|se|cbam)");
}

void ModelConfig::validate() const {
  if (num_classes != 2) throw ConfigError("model: num_classes must be 2");
  if (dense_widths[0] < 1 || dense_widths[1] < 1)
    throw ConfigError("model: dense widths must be >= 1");
  // Two conv(k3)+pool stages need at least 10 pixels to survive.
  if (input_size < 10)
    throw ConfigError("model: input_size must be >= 10, got " +
                      std::to_string(input_size));
  for (float r : dropout_rates)
    if (!(r >= 0.f && r < 1.f))
      throw ConfigError("model: dropout rates must be in [0,1)");
  if (attention_reduction < 1)
    throw ConfigError("model: attention_reduction must be >= 1");
}

namespace {

// Fixed per-position substream slots so a given (seed, position) always
// yields the same initial tensor regardless of which toggles are active.
enum InitSlot : uint64_t {
  kSlotConv1 = 0,
  kSlotBn1 = 1,
  kSlotAttention = 2,
  kSlotConv2 = 3,
  kSlotBn2 = 4,
  kSlotFc1 = 5,
  kSlotFc2 = 6,
  kSlotFc3 = 7,
  kSlotDropSpatial = 8,
  kSlotDropHead1 = 9,
  kSlotDropHead2 = 10,
};

}  // namespace

template <typename T>
ExpressionNetT<T> build_model(const ModelConfig& config) {
  config.validate();
  ExpressionNetT<T> net;
  net.config = config;

  auto push = [&net](const std::string& name, LayerPtr<T> layer) {
    net.layer_names.push_back(name);
    net.layers.push_back(std::move(layer));
  };
  auto init_rng = [&config](uint64_t slot) { return Rng::child(config.seed, slot); };

  const int64_t s1 = config.input_size - 2;  // after conv1 (k=3, no padding)
  const int64_t p1 = s1 / 2;                 // after pool1
  const int64_t s2 = p1 - 2;                 // after conv2
  const int64_t p2 = s2 / 2;                 // after pool2
  net.flat_features = 11 * p2 * p2;

  {
    Rng r = init_rng(kSlotConv1);
    push("conv1", std::make_unique<Conv2d<T>>(3, 5, 3, r));
  }
  if (config.use_batchnorm) push("bn1", std::make_unique<BatchNorm2d<T>>(5));
  push("relu1", std::make_unique<ReLU<T>>());
  push("pool1", std::make_unique<MaxPool2d<T>>());
  if (config.attention == AttentionKind::SE) {
    Rng r = init_rng(kSlotAttention);
    push("se", std::make_unique<SEBlock<T>>(5, config.attention_reduction, r));
  } else if (config.attention == AttentionKind::CBAM) {
    Rng r = init_rng(kSlotAttention);
    push("cbam", std::make_unique<CBAM<T>>(5, config.attention_reduction, r));
  }
  {
    Rng r = init_rng(kSlotConv2);
    push("conv2", std::make_unique<Conv2d<T>>(5, 11, 3, r));
  }
  if (config.use_batchnorm) push("bn2", std::make_unique<BatchNorm2d<T>>(11));
  push("relu2", std::make_unique<ReLU<T>>());
  net.gradcam_layer = static_cast<int>(net.layers.size()) - 1;
  push("pool2", std::make_unique<MaxPool2d<T>>());
  if (config.use_dropout)
    push("drop_spatial", std::make_unique<Dropout<T>>(
                             static_cast<T>(config.dropout_rates[0]),
                             Rng::child(config.seed, kSlotDropSpatial)));
  push("flatten", std::make_unique<Flatten<T>>());
  {
    Rng r = init_rng(kSlotFc1);
    push("fc1", std::make_unique<Dense<T>>(net.flat_features, config.dense_widths[0],
                                           r, Activation::ReLU));
  }
  if (config.use_dropout)
    push("drop1", std::make_unique<Dropout<T>>(
                      static_cast<T>(config.dropout_rates[1]),
                      Rng::child(config.seed, kSlotDropHead1)));
  {
    Rng r = init_rng(kSlotFc2);
    push("fc2", std::make_unique<Dense<T>>(config.dense_widths[0],
                                           config.dense_widths[1], r,
                                           Activation::ReLU));
  }
  if (config.use_dropout)
    push("drop2", std::make_unique<Dropout<T>>(
                      static_cast<T>(config.dropout_rates[2]),
                      Rng::child(config.seed, kSlotDropHead2)));
  {
    Rng r = init_rng(kSlotFc3);
    push("fc3", std::make_unique<Dense<T>>(config.dense_widths[1],
                                           config.num_classes, r,
                                           Activation::None));
  }
  return net;
}

template <typename T>
Tensor4T<T> ExpressionNetT<T>::forward(const Tensor4T<T>& x, Mode mode) {
  Tensor4T<T> v = x;
  for (auto& layer : layers) v = layer->forward(v, mode);
  return v;
}

template <typename T>
Tensor4T<T> ExpressionNetT<T>::backward(const Tensor4T<T>& dlogits) {
  Tensor4T<T> g = dlogits;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
void ExpressionNetT<T>::zero_grads() {
  for (auto& layer : layers) layer->zero_grads();
}

template <typename T>
double ExpressionNetT<T>::kink_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& layer : layers) m = std::min(m, layer->kink_margin());
  return m;
}

template <typename T>
std::vector<ParamRef<T>> ExpressionNetT<T>::params() {
  std::vector<ParamRef<T>> out;
  for (size_t i = 0; i < layers.size(); ++i)
    for (auto& p : layers[i]->params())
      out.push_back({layer_names[i] + "." + p.name, p.value, p.grad});
  return out;
}

template <typename T>
std::vector<ParamRef<T>> ExpressionNetT<T>::buffers() {
  std::vector<ParamRef<T>> out;
  for (size_t i = 0; i < layers.size(); ++i)
    for (auto& p : layers[i]->buffers())
      out.push_back({layer_names[i] + "." + p.name, p.value, p.grad});
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Rng*>> ExpressionNetT<T>::rngs() {
  std::vector<std::pair<std::string, Rng*>> out;
  for (size_t i = 0; i < layers.size(); ++i)
    if (Rng* r = layers[i]->rng()) out.emplace_back(layer_names[i], r);
  return out;
}

template <typename T>
int64_t count_params(ExpressionNetT<T>& net) {
  int64_t total = 0;
  for (auto& p : net.params()) total += p.value->numel();
  return total;
}

template <typename T>
Tensor4T<T> forward_logits(ExpressionNetT<T>& net, const Tensor4T<T>& batch,
                           Mode mode) {
  const int s = net.config.input_size;
  if (batch.c() != 3 || batch.h() != s || batch.w() != s)
    throw ContractError("forward_logits: expected [n,3," + std::to_string(s) + "," +
                        std::to_string(s) + "], got " + batch.shape_str());
  return net.forward(batch, mode);
}

template <typename T>
std::vector<int> predict(ExpressionNetT<T>& net, const Tensor4T<T>& batch) {
  const Tensor4T<T> logits = forward_logits(net, batch, Mode::Eval);
  std::vector<int> out(static_cast<size_t>(logits.rows()));
  for (int64_t r = 0; r < logits.rows(); ++r) {
    int best = 0;
    for (int64_t j = 1; j < logits.cols(); ++j)
      if (logits.at2(r, j) > logits.at2(r, best)) best = static_cast<int>(j);
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

std::vector<ExperimentSpec> experiment_configs(const ModelConfig& base) {
  auto with = [&base](bool bn, bool dropout, AttentionKind att) {
    ModelConfig c = base;
    c.use_batchnorm = bn;
    c.use_dropout = dropout;
    c.attention = att;
    return c;
  };
  return {
      {"Experiment 1: Without Regularization", with(false, false, AttentionKind::None)},
      {"Experiment 2: With Attention Block (SE Block)", with(false, false, AttentionKind::SE)},
      {"Experiment 3: With CBAM (Channel + Spatial Attention)", with(false, false, AttentionKind::CBAM)},
      {"Experiment 4: With BatchNorm", with(true, false, AttentionKind::None)},
      {"Experiment 5: With Dropout", with(false, true, AttentionKind::None)},
      {"Experiment 6: With BatchNorm and Dropout", with(true, true, AttentionKind::None)},
      {"Experiment 7: With BatchNorm, Dropout, and SE Attention", with(true, true, AttentionKind::SE)},
      {"Experiment 8: With BatchNorm, Dropout, and CBAM Attention", with(true, true, AttentionKind::CBAM)},
  };
}

std::vector<ExperimentSpec> experiment_configs() {
  return experiment_configs(ModelConfig{});
}

template <typename T>
Tensor4T<T> grad_cam(ExpressionNetT<T>& net, const Tensor4T<T>& image,
                     int target_class) {
  if (image.n() != 1)
    throw ContractError("grad_cam: expected a single image, got " + image.shape_str());
  if (target_class < 0 || target_class >= net.config.num_classes)
    throw ContractError("grad_cam: target class out of range");
  // Forward in eval mode, capturing the second conv stage's activations.
  Tensor4T<T> v = image;
  Tensor4T<T> maps;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    v = net.layers[i]->forward(v, Mode::Eval);
    if (static_cast<int>(i) == net.gradcam_layer) maps = v;
  }
  // d(logit_target)/d(maps) via the tail layers only.
  Tensor4T<T> g = Tensor4T<T>::matrix(1, net.config.num_classes);
  g.at2(0, target_class) = T(1);
  for (int i = static_cast<int>(net.layers.size()) - 1; i > net.gradcam_layer; --i)
    g = net.layers[i]->backward(g);
  // Channel weights: spatial mean of the gradient.
  const int64_t c = maps.c(), mh = maps.h(), mw = maps.w();
  const int64_t plane = mh * mw;
  std::vector<double> alpha(static_cast<size_t>(c), 0.0);
  for (int64_t j = 0; j < c; ++j) {
    double sum = 0.0;
    const T* gp = g.data.data() + j * plane;
    for (int64_t q = 0; q < plane; ++q) sum += static_cast<double>(gp[q]);
    alpha[static_cast<size_t>(j)] = sum / static_cast<double>(plane);
  }
  Tensor4T<T> raw(1, 1, mh, mw);
  for (int64_t q = 0; q < plane; ++q) {
    double acc = 0.0;
    for (int64_t j = 0; j < c; ++j)
      acc += alpha[static_cast<size_t>(j)] *
             static_cast<double>(maps.data[static_cast<size_t>(j * plane + q)]);
    raw.data[static_cast<size_t>(q)] = static_cast<T>(acc > 0.0 ? acc : 0.0);
  }
  // Bilinear upsample aligned to the receptive-field geometry: cell (y, x)
  // of the second conv stage is centered on input pixel (2y + 3.5, 2x + 3.5)
  // for this conv3-pool2-conv3 trace.
  const int s = net.config.input_size;
  Tensor4T<T> up(1, 1, s, s);
  for (int64_t y = 0; y < s; ++y) {
    double fy = (static_cast<double>(y) - 3.5) / 2.0;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(mh - 1));
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, mh - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < s; ++x) {
      double fx = (static_cast<double>(x) - 3.5) / 2.0;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(mw - 1));
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, mw - 1);
      const double wx = fx - static_cast<double>(x0);
      const double a = static_cast<double>(raw.data[static_cast<size_t>(y0 * mw + x0)]);
      const double b = static_cast<double>(raw.data[static_cast<size_t>(y0 * mw + x1)]);
      const double cc = static_cast<double>(raw.data[static_cast<size_t>(y1 * mw + x0)]);
      const double d = static_cast<double>(raw.data[static_cast<size_t>(y1 * mw + x1)]);
      up.data[static_cast<size_t>(y * s + x)] = static_cast<T>(
          (1.0 - wy) * ((1.0 - wx) * a + wx * b) + wy * ((1.0 - wx) * cc + wx * d));
    }
  }
  T mx = T(0);
  for (T u : up.data) mx = std::max(mx, u);
  if (mx > T(0))
    for (T& u : up.data) u /= mx;
  // The backward pass above touched tail-layer grads; training never sees
  // them because every optimizer step starts from zeroed grads, but leave a
  // clean slate anyway.
  net.zero_grads();
  return up;
}

#define KEXP_INSTANTIATE(T)                                                      \
  template ExpressionNetT<T> build_model<T>(const ModelConfig&);                 \
  template struct ExpressionNetT<T>;                                             \
  template int64_t count_params<T>(ExpressionNetT<T>&);                          \
  template Tensor4T<T> forward_logits<T>(ExpressionNetT<T>&, const Tensor4T<T>&, \
                                         Mode);                                  \
  template std::vector<int> predict<T>(ExpressionNetT<T>&, const Tensor4T<T>&);  \
  template Tensor4T<T> grad_cam<T>(ExpressionNetT<T>&, const Tensor4T<T>&, int);

KEXP_INSTANTIATE(float)
KEXP_INSTANTIATE(double)

#undef KEXP_INSTANTIATE

}  // namespace kexp
