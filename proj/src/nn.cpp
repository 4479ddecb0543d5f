#include "kexp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kexp {

template <typename T>
void he_init(Tensor4T<T>& w, int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

// ---- Conv2d -----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(int64_t in_channels, int64_t out_channels, int kernel,
                  Rng& init_rng, int pad)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      pad_(pad),
      weight_(out_channels, in_channels, kernel, kernel),
      weight_grad_(out_channels, in_channels, kernel, kernel),
      bias_(1, out_channels, 1, 1),
      bias_grad_(1, out_channels, 1, 1) {
  he_init(weight_, in_channels * kernel * kernel, init_rng);
}

template <typename T>
Tensor4T<T> Conv2d<T>::forward(const Tensor4T<T>& x, Mode) {
  if (x.c() != in_channels_)
    throw ContractError("conv: input channels " + std::to_string(x.c()) +
                        " do not match weights " + weight_.shape_str());
  if (kernel_ > x.h() + 2 * pad_ || kernel_ > x.w() + 2 * pad_)
    throw ContractError("conv: kernel " + std::to_string(kernel_) +
                        " larger than input " + x.shape_str());
  const int64_t n = x.n();
  const int64_t ho = conv_out_extent(x.h(), kernel_, 1, pad_);
  const int64_t wo = conv_out_extent(x.w(), kernel_, 1, pad_);
  cols_ = im2col(x, kernel_, 1, pad_);
  x_shape_ = x.shape;
  const Tensor4T<T> wmat =
      weight_.reshaped(out_channels_, in_channels_ * kernel_ * kernel_, 1, 1);
  const Tensor4T<T> ymat = matmul(wmat, cols_);  // [cout, n*ho*wo]
  Tensor4T<T> y(n, out_channels_, ho, wo);
  for (int64_t f = 0; f < out_channels_; ++f) {
    const T b = bias_.data[static_cast<size_t>(f)];
    const T* src = ymat.data.data() + f * n * ho * wo;
    for (int64_t i = 0; i < n; ++i) {
      T* dst = y.data.data() + (i * out_channels_ + f) * ho * wo;
      const T* s = src + i * ho * wo;
      for (int64_t p = 0; p < ho * wo; ++p) dst[p] = s[p] + b;
    }
  }
  have_cache_ = true;
  return y;
}

template <typename T>
Tensor4T<T> Conv2d<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "conv");
  have_cache_ = false;
  const int64_t n = dy.n(), ho = dy.h(), wo = dy.w();
  // Regroup dy as [cout, n*ho*wo] to match the forward lowering.
  Tensor4T<T> dymat = Tensor4T<T>::matrix(out_channels_, n * ho * wo);
  for (int64_t f = 0; f < out_channels_; ++f)
    for (int64_t i = 0; i < n; ++i) {
      const T* src = dy.data.data() + (i * out_channels_ + f) * ho * wo;
      T* dst = dymat.data.data() + f * n * ho * wo + i * ho * wo;
      std::copy(src, src + ho * wo, dst);
    }
  // db; summed over batch and positions in 64-bit.
  for (int64_t f = 0; f < out_channels_; ++f) {
    double sum = 0.0;
    const T* row = dymat.data.data() + f * n * ho * wo;
    for (int64_t p = 0; p < n * ho * wo; ++p) sum += static_cast<double>(row[p]);
    bias_grad_.data[static_cast<size_t>(f)] += static_cast<T>(sum);
  }
  // dW = dy_mat x cols^T, accumulated over the batch.
  const Tensor4T<T> dwmat = matmul_bt(dymat, cols_);
  for (size_t i = 0; i < weight_grad_.data.size(); ++i)
    weight_grad_.data[i] += dwmat.data[i];
  // dX = W^T x dy_mat, folded back onto the input grid.
  const Tensor4T<T> wmat =
      weight_.reshaped(out_channels_, in_channels_ * kernel_ * kernel_, 1, 1);
  const Tensor4T<T> dcols = matmul_at(wmat, dymat);
  return col2im(dcols, x_shape_, kernel_, 1, pad_);
}

template <typename T>
std::vector<ParamRef<T>> Conv2d<T>::params() {
  return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
}

// ---- BatchNorm2d -------------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int64_t channels, T epsilon, T ema_momentum)
    : channels_(channels),
      epsilon_(epsilon),
      ema_momentum_(ema_momentum),
      gamma_(1, channels, 1, 1, T(1)),
      gamma_grad_(1, channels, 1, 1),
      beta_(1, channels, 1, 1),
      beta_grad_(1, channels, 1, 1),
      running_mean_(1, channels, 1, 1),
      running_var_(1, channels, 1, 1, T(1)) {
  if (epsilon <= T(0)) throw ContractError("batchnorm: epsilon must be positive");
}

template <typename T>
Tensor4T<T> BatchNorm2d<T>::forward(const Tensor4T<T>& x, Mode mode) {
  if (x.c() != channels_)
    throw ContractError("batchnorm: channel mismatch, input " + x.shape_str() +
                        " vs " + std::to_string(channels_) + " channels");
  const int64_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int64_t count = n * h * w;
  const int64_t plane = h * w;
  Tensor4T<T> y(n, c, h, w);
  cached_mode_ = mode;
  if (mode == Mode::Train) {
    if (count < 2)
      throw ContractError(
          "batchnorm: train mode needs at least 2 values per channel, got " +
          std::to_string(count));
    const ChannelMoments<T> m = moments(x);
    x_hat_ = Tensor4T<T>(n, c, h, w);
    inv_std_.assign(static_cast<size_t>(c), 0.0);
    for (int64_t j = 0; j < c; ++j) {
      const double mean = m.mean[static_cast<size_t>(j)];
      const double var = m.var[static_cast<size_t>(j)];
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(epsilon_));
      inv_std_[static_cast<size_t>(j)] = inv;
      const double g = static_cast<double>(gamma_.data[static_cast<size_t>(j)]);
      const double b = static_cast<double>(beta_.data[static_cast<size_t>(j)]);
      for (int64_t i = 0; i < n; ++i) {
        const T* xp = x.data.data() + (i * c + j) * plane;
        T* hp = x_hat_.data.data() + (i * c + j) * plane;
        T* yp = y.data.data() + (i * c + j) * plane;
        for (int64_t p = 0; p < plane; ++p) {
          const double xh = (static_cast<double>(xp[p]) - mean) * inv;
          hp[p] = static_cast<T>(xh);
          yp[p] = static_cast<T>(g * xh + b);
        }
      }
      // Running stats: biased variance normalizes the batch, the unbiased
      // estimate is what eval mode consumes.
      const double unbiased =
          count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1)
                    : var;
      const double mom = static_cast<double>(ema_momentum_);
      auto& rm = running_mean_.data[static_cast<size_t>(j)];
      auto& rv = running_var_.data[static_cast<size_t>(j)];
      rm = static_cast<T>((1.0 - mom) * static_cast<double>(rm) + mom * mean);
      rv = static_cast<T>((1.0 - mom) * static_cast<double>(rv) + mom * unbiased);
    }
  } else {
    for (int64_t j = 0; j < c; ++j) {
      const double mean = static_cast<double>(running_mean_.data[static_cast<size_t>(j)]);
      const double var = static_cast<double>(running_var_.data[static_cast<size_t>(j)]);
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(epsilon_));
      const double g = static_cast<double>(gamma_.data[static_cast<size_t>(j)]);
      const double b = static_cast<double>(beta_.data[static_cast<size_t>(j)]);
      for (int64_t i = 0; i < n; ++i) {
        const T* xp = x.data.data() + (i * c + j) * plane;
        T* yp = y.data.data() + (i * c + j) * plane;
        for (int64_t p = 0; p < plane; ++p)
          yp[p] = static_cast<T>(g * ((static_cast<double>(xp[p]) - mean) * inv) + b);
      }
    }
    // Eval backward needs only gamma and the running inverse stddev.
    inv_std_.assign(static_cast<size_t>(c), 0.0);
    for (int64_t j = 0; j < c; ++j)
      inv_std_[static_cast<size_t>(j)] =
          1.0 / std::sqrt(static_cast<double>(running_var_.data[static_cast<size_t>(j)]) +
                          static_cast<double>(epsilon_));
  }
  have_cache_ = true;
  return y;
}

template <typename T>
Tensor4T<T> BatchNorm2d<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "batchnorm");
  have_cache_ = false;
  const int64_t n = dy.n(), c = dy.c(), h = dy.h(), w = dy.w();
  const int64_t plane = h * w;
  const int64_t count = n * plane;
  Tensor4T<T> dx(n, c, h, w);
  if (cached_mode_ == Mode::Eval) {
    // Eval normalization is an affine map with frozen stats; only dx matters
    // here (eval backward serves activation attribution, not training).
    for (int64_t j = 0; j < c; ++j) {
      const double k = static_cast<double>(gamma_.data[static_cast<size_t>(j)]) *
                       inv_std_[static_cast<size_t>(j)];
      for (int64_t i = 0; i < n; ++i) {
        const T* dyp = dy.data.data() + (i * c + j) * plane;
        T* dxp = dx.data.data() + (i * c + j) * plane;
        for (int64_t p = 0; p < plane; ++p)
          dxp[p] = static_cast<T>(static_cast<double>(dyp[p]) * k);
      }
    }
    return dx;
  }
  for (int64_t j = 0; j < c; ++j) {
    const double g = static_cast<double>(gamma_.data[static_cast<size_t>(j)]);
    const double inv = inv_std_[static_cast<size_t>(j)];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const T* dyp = dy.data.data() + (i * c + j) * plane;
      const T* hp = x_hat_.data.data() + (i * c + j) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        sum_dy += static_cast<double>(dyp[p]);
        sum_dy_xhat += static_cast<double>(dyp[p]) * static_cast<double>(hp[p]);
      }
    }
    gamma_grad_.data[static_cast<size_t>(j)] += static_cast<T>(sum_dy_xhat);
    beta_grad_.data[static_cast<size_t>(j)] += static_cast<T>(sum_dy);
    // Full gradient including the mean/variance dependency paths:
    // dx = (gamma * inv / count) * (count*dy - sum(dy) - x_hat * sum(dy*x_hat))
    const double k = g * inv / static_cast<double>(count);
    for (int64_t i = 0; i < n; ++i) {
      const T* dyp = dy.data.data() + (i * c + j) * plane;
      const T* hp = x_hat_.data.data() + (i * c + j) * plane;
      T* dxp = dx.data.data() + (i * c + j) * plane;
      for (int64_t p = 0; p < plane; ++p)
        dxp[p] = static_cast<T>(k * (static_cast<double>(count) * static_cast<double>(dyp[p]) -
                                     sum_dy -
                                     static_cast<double>(hp[p]) * sum_dy_xhat));
    }
  }
  return dx;
}

template <typename T>
std::vector<ParamRef<T>> BatchNorm2d<T>::params() {
  return {{"gamma", &gamma_, &gamma_grad_}, {"beta", &beta_, &beta_grad_}};
}

template <typename T>
std::vector<ParamRef<T>> BatchNorm2d<T>::buffers() {
  return {{"running_mean", &running_mean_, nullptr},
          {"running_var", &running_var_, nullptr}};
}

// ---- ReLU --------------------------------------------------------------------

template <typename T>
Tensor4T<T> ReLU<T>::forward(const Tensor4T<T>& x, Mode) {
  x_ = x;
  have_cache_ = true;
  Tensor4T<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor4T<T> ReLU<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "relu");
  have_cache_ = false;
  check_same_shape(dy, x_, "relu backward");
  Tensor4T<T> dx = dy;
  for (size_t i = 0; i < dx.data.size(); ++i)
    if (!(x_.data[i] > T(0))) dx.data[i] = T(0);
  return dx;
}

template <typename T>
double ReLU<T>::kink_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const T& v : x_.data) m = std::min(m, std::abs(static_cast<double>(v)));
  return m;
}

// ---- MaxPool2d ----------------------------------------------------------------

template <typename T>
Tensor4T<T> MaxPool2d<T>::forward(const Tensor4T<T>& x, Mode) {
  const int64_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  if (h < 2 || w < 2)
    throw ContractError("maxpool: input " + x.shape_str() + " smaller than window");
  const int64_t ho = h / 2, wo = w / 2;
  Tensor4T<T> y(n, c, ho, wo);
  x_shape_ = x.shape;
  argmax_.assign(static_cast<size_t>(y.numel()), 0);
  kink_margin_ = std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T* plane = x.data.data() + (i * c + j) * h * w;
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          const int64_t y0 = oy * 2, x0 = ox * 2;
          int64_t best = y0 * w + x0;
          T bv = plane[best];
          T second = std::numeric_limits<T>::lowest();
          // strict > keeps the first element of the scan on ties
          const int64_t cands[3] = {y0 * w + x0 + 1, (y0 + 1) * w + x0,
                                    (y0 + 1) * w + x0 + 1};
          for (int64_t cand : cands) {
            if (plane[cand] > bv) {
              second = bv;
              bv = plane[cand];
              best = cand;
            } else if (plane[cand] > second) {
              second = plane[cand];
            }
          }
          // Ties at a non-positive value are flat regions when the input came
          // through a ReLU (both sides clamp to zero), not kinks.
          if (bv > T(0) || bv != second)
            kink_margin_ = std::min(kink_margin_, static_cast<double>(bv) -
                                                      static_cast<double>(second));
          const int64_t o = ((i * c + j) * ho + oy) * wo + ox;
          y.data[static_cast<size_t>(o)] = bv;
          argmax_[static_cast<size_t>(o)] = (i * c + j) * h * w + best;
        }
    }
  have_cache_ = true;
  return y;
}

template <typename T>
Tensor4T<T> MaxPool2d<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "maxpool");
  have_cache_ = false;
  Tensor4T<T> dx(x_shape_[0], x_shape_[1], x_shape_[2], x_shape_[3]);
  for (int64_t o = 0; o < dy.numel(); ++o)
    dx.data[static_cast<size_t>(argmax_[static_cast<size_t>(o)])] +=
        dy.data[static_cast<size_t>(o)];
  return dx;
}

// ---- Dense --------------------------------------------------------------------

template <typename T>
Dense<T>::Dense(int64_t in_features, int64_t out_features, Rng& init_rng,
                Activation act)
    : in_features_(in_features),
      out_features_(out_features),
      act_(act),
      weight_(Tensor4T<T>::matrix(in_features, out_features)),
      weight_grad_(Tensor4T<T>::matrix(in_features, out_features)),
      bias_(Tensor4T<T>::matrix(1, out_features)),
      bias_grad_(Tensor4T<T>::matrix(1, out_features)) {
  he_init(weight_, in_features, init_rng);
}

template <typename T>
Tensor4T<T> Dense<T>::forward(const Tensor4T<T>& x, Mode) {
  if (!x.is_matrix() || x.cols() != in_features_)
    throw ContractError("dense: input " + x.shape_str() + " does not match weights " +
                        weight_.shape_str());
  x_ = x;
  Tensor4T<T> y = matmul(x, weight_);
  for (int64_t r = 0; r < y.rows(); ++r)
    for (int64_t c = 0; c < y.cols(); ++c)
      y.at2(r, c) += bias_.data[static_cast<size_t>(c)];
  if (act_ == Activation::ReLU) {
    pre_ = y;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
  }
  have_cache_ = true;
  return y;
}

template <typename T>
Tensor4T<T> Dense<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "dense");
  have_cache_ = false;
  Tensor4T<T> dpre = dy;
  if (act_ == Activation::ReLU) {
    for (size_t i = 0; i < dpre.data.size(); ++i)
      if (!(pre_.data[i] > T(0))) dpre.data[i] = T(0);
  }
  const Tensor4T<T> dw = matmul_at(x_, dpre);
  for (size_t i = 0; i < weight_grad_.data.size(); ++i)
    weight_grad_.data[i] += dw.data[i];
  for (int64_t c = 0; c < dpre.cols(); ++c) {
    double sum = 0.0;
    for (int64_t r = 0; r < dpre.rows(); ++r)
      sum += static_cast<double>(dpre.at2(r, c));
    bias_grad_.data[static_cast<size_t>(c)] += static_cast<T>(sum);
  }
  return matmul_bt(dpre, weight_);
}

template <typename T>
std::vector<ParamRef<T>> Dense<T>::params() {
  return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
}

template <typename T>
double Dense<T>::kink_margin() const {
  if (act_ != Activation::ReLU) return std::numeric_limits<double>::infinity();
  double m = std::numeric_limits<double>::infinity();
  for (const T& v : pre_.data) m = std::min(m, std::abs(static_cast<double>(v)));
  return m;
}

// ---- Dropout ------------------------------------------------------------------

template <typename T>
Dropout<T>::Dropout(T rate, Rng rng) : rate_(rate), rng_(rng) {
  if (!(rate >= T(0) && rate < T(1)))
    throw ContractError("dropout: rate must be in [0,1), got " +
                        std::to_string(static_cast<double>(rate)));
}

template <typename T>
Tensor4T<T> Dropout<T>::forward(const Tensor4T<T>& x, Mode mode) {
  have_cache_ = true;
  if (mode == Mode::Eval || rate_ == T(0)) {
    eval_pass_ = true;
    return x;
  }
  eval_pass_ = false;
  const double keep = 1.0 - static_cast<double>(rate_);
  const T scale_v = static_cast<T>(1.0 / keep);
  scaled_mask_ = Tensor4T<T>(x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
  Tensor4T<T> y = x;
  for (size_t i = 0; i < y.data.size(); ++i) {
    if (rng_.next_double() < keep) {
      scaled_mask_.data[i] = scale_v;
      y.data[i] *= scale_v;
    } else {
      scaled_mask_.data[i] = T(0);
      y.data[i] = T(0);
    }
  }
  return y;
}

template <typename T>
Tensor4T<T> Dropout<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "dropout");
  have_cache_ = false;
  if (eval_pass_) return dy;
  check_same_shape(dy, scaled_mask_, "dropout backward");
  return mul(dy, scaled_mask_);
}

// ---- Flatten ------------------------------------------------------------------

template <typename T>
Tensor4T<T> Flatten<T>::forward(const Tensor4T<T>& x, Mode) {
  x_shape_ = x.shape;
  have_cache_ = true;
  return x.reshaped(x.n(), x.c() * x.h() * x.w(), 1, 1);
}

template <typename T>
Tensor4T<T> Flatten<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "flatten");
  have_cache_ = false;
  return dy.reshaped(x_shape_[0], x_shape_[1], x_shape_[2], x_shape_[3]);
}

// ---- loss ---------------------------------------------------------------------

template <typename T>
Tensor4T<T> softmax(const Tensor4T<T>& logits) {
  if (!logits.is_matrix())
    throw ContractError("softmax: expected [n,classes], got " + logits.shape_str());
  Tensor4T<T> p = logits;
  const int64_t n = p.rows(), c = p.cols();
  for (int64_t r = 0; r < n; ++r) {
    double m = static_cast<double>(p.at2(r, 0));
    for (int64_t j = 1; j < c; ++j)
      m = std::max(m, static_cast<double>(p.at2(r, j)));
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j)
      z += std::exp(static_cast<double>(p.at2(r, j)) - m);
    for (int64_t j = 0; j < c; ++j)
      p.at2(r, j) =
          static_cast<T>(std::exp(static_cast<double>(p.at2(r, j)) - m) / z);
  }
  return p;
}

template <typename T>
LossResult<T> softmax_xent(const Tensor4T<T>& logits, const std::vector<int>& labels) {
  if (!logits.is_matrix())
    throw ContractError("softmax_xent: expected [n,classes], got " +
                        logits.shape_str());
  const int64_t n = logits.rows(), c = logits.cols();
  if (static_cast<int64_t>(labels.size()) != n)
    throw ContractError("softmax_xent: " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(n) + " rows");
  for (int v : labels)
    if (v < 0 || v >= c)
      throw ContractError("softmax_xent: label " + std::to_string(v) +
                          " out of range [0," + std::to_string(c - 1) + "]");
  LossResult<T> out;
  out.dlogits = Tensor4T<T>::matrix(n, c);
  double total = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    double m = static_cast<double>(logits.at2(r, 0));
    for (int64_t j = 1; j < c; ++j)
      m = std::max(m, static_cast<double>(logits.at2(r, j)));
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j)
      z += std::exp(static_cast<double>(logits.at2(r, j)) - m);
    const double log_z = std::log(z);
    total -= static_cast<double>(logits.at2(r, labels[static_cast<size_t>(r)])) - m - log_z;
    for (int64_t j = 0; j < c; ++j) {
      const double p = std::exp(static_cast<double>(logits.at2(r, j)) - m) / z;
      const double onehot = (j == labels[static_cast<size_t>(r)]) ? 1.0 : 0.0;
      out.dlogits.at2(r, j) = static_cast<T>((p - onehot) / static_cast<double>(n));
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

#define KEXP_INSTANTIATE(T)                                                  \
  template void he_init<T>(Tensor4T<T>&, int64_t, Rng&);                     \
  template class Conv2d<T>;                                                  \
  template class BatchNorm2d<T>;                                             \
  template class ReLU<T>;                                                    \
  template class MaxPool2d<T>;                                               \
  template class Dense<T>;                                                   \
  template class Dropout<T>;                                                 \
  template class Flatten<T>;                                                 \
  template Tensor4T<T> softmax<T>(const Tensor4T<T>&);                       \
  template LossResult<T> softmax_xent<T>(const Tensor4T<T>&,                 \
                                         const std::vector<int>&);

KEXP_INSTANTIATE(float)
KEXP_INSTANTIATE(double)

#undef KEXP_INSTANTIATE

}  // namespace kexp
