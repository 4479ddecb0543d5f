#include "kexp/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kexp {

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

namespace {

int64_t reduced_width(int64_t channels, int reduction) {
  if (reduction < 1) throw ContractError("attention: reduction must be >= 1");
  return std::max<int64_t>(1, channels / reduction);
}

// [n, c] mean over the spatial extent of each channel.
template <typename T>
Tensor4T<T> global_avg_pool(const Tensor4T<T>& x) {
  const int64_t n = x.n(), c = x.c(), plane = x.h() * x.w();
  Tensor4T<T> out = Tensor4T<T>::matrix(n, c);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T* p = x.data.data() + (i * c + j) * plane;
      double sum = 0.0;
      for (int64_t q = 0; q < plane; ++q) sum += static_cast<double>(p[q]);
      out.at2(i, j) = static_cast<T>(sum / static_cast<double>(plane));
    }
  return out;
}

}  // namespace

// ---- SEBlock -----------------------------------------------------------------

template <typename T>
SEBlock<T>::SEBlock(int64_t channels, int reduction, Rng& init_rng)
    : channels_(channels),
      hidden_(reduced_width(channels, reduction)),
      fc1_(channels, hidden_, init_rng, Activation::ReLU),
      fc2_(hidden_, channels, init_rng, Activation::None) {
  if (channels < 1) throw ContractError("se: channels must be >= 1");
}

template <typename T>
Tensor4T<T> SEBlock<T>::forward(const Tensor4T<T>& x, Mode mode) {
  if (x.c() != channels_)
    throw ContractError("se: channel mismatch, input " + x.shape_str());
  x_ = x;
  const Tensor4T<T> squeezed = global_avg_pool(x);
  const Tensor4T<T> hidden = fc1_.forward(squeezed, mode);
  Tensor4T<T> logits = fc2_.forward(hidden, mode);
  weights_ = logits;
  for (auto& v : weights_.data) v = sigmoid(v);
  Tensor4T<T> y = x;
  const int64_t plane = x.h() * x.w();
  for (int64_t i = 0; i < x.n(); ++i)
    for (int64_t j = 0; j < channels_; ++j) {
      const T s = weights_.at2(i, j);
      T* p = y.data.data() + (i * channels_ + j) * plane;
      for (int64_t q = 0; q < plane; ++q) p[q] *= s;
    }
  have_cache_ = true;
  return y;
}

template <typename T>
Tensor4T<T> SEBlock<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "se");
  have_cache_ = false;
  const int64_t n = dy.n(), plane = dy.h() * dy.w();
  // Scale path plus the squeeze path through the MLP.
  Tensor4T<T> dweights = Tensor4T<T>::matrix(n, channels_);
  Tensor4T<T> dx = dy;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < channels_; ++j) {
      const T s = weights_.at2(i, j);
      const T* dyp = dy.data.data() + (i * channels_ + j) * plane;
      const T* xp = x_.data.data() + (i * channels_ + j) * plane;
      T* dxp = dx.data.data() + (i * channels_ + j) * plane;
      double ds = 0.0;
      for (int64_t q = 0; q < plane; ++q) {
        ds += static_cast<double>(dyp[q]) * static_cast<double>(xp[q]);
        dxp[q] = dyp[q] * s;
      }
      dweights.at2(i, j) = static_cast<T>(ds);
    }
  // Sigmoid, then the two dense layers.
  Tensor4T<T> dlogits = dweights;
  for (size_t i = 0; i < dlogits.data.size(); ++i) {
    const T s = weights_.data[i];
    dlogits.data[i] *= s * (T(1) - s);
  }
  const Tensor4T<T> dhidden = fc2_.backward(dlogits);
  const Tensor4T<T> dsqueezed = fc1_.backward(dhidden);
  // GAP spreads its gradient uniformly over the spatial extent.
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < channels_; ++j) {
      const T g = static_cast<T>(static_cast<double>(dsqueezed.at2(i, j)) /
                                 static_cast<double>(plane));
      T* dxp = dx.data.data() + (i * channels_ + j) * plane;
      for (int64_t q = 0; q < plane; ++q) dxp[q] += g;
    }
  return dx;
}

template <typename T>
std::vector<ParamRef<T>> SEBlock<T>::params() {
  std::vector<ParamRef<T>> out;
  for (auto& p : fc1_.params()) out.push_back({"fc1." + p.name, p.value, p.grad});
  for (auto& p : fc2_.params()) out.push_back({"fc2." + p.name, p.value, p.grad});
  return out;
}

// ---- CBAM --------------------------------------------------------------------

template <typename T>
CBAM<T>::CBAM(int64_t channels, int reduction, Rng& init_rng, int spatial_kernel)
    : channels_(channels),
      hidden_(reduced_width(channels, reduction)),
      w1_(Tensor4T<T>::matrix(channels, hidden_)),
      w1_grad_(Tensor4T<T>::matrix(channels, hidden_)),
      b1_(Tensor4T<T>::matrix(1, hidden_)),
      b1_grad_(Tensor4T<T>::matrix(1, hidden_)),
      w2_(Tensor4T<T>::matrix(hidden_, channels)),
      w2_grad_(Tensor4T<T>::matrix(hidden_, channels)),
      b2_(Tensor4T<T>::matrix(1, channels)),
      b2_grad_(Tensor4T<T>::matrix(1, channels)),
      spatial_conv_(2, 1, spatial_kernel, init_rng, spatial_kernel / 2) {
  if (channels < 1) throw ContractError("cbam: channels must be >= 1");
  he_init(w1_, channels, init_rng);
  he_init(w2_, hidden_, init_rng);
}

template <typename T>
Tensor4T<T> CBAM<T>::mlp_forward(const Tensor4T<T>& in, Tensor4T<T>& pre_cache) {
  Tensor4T<T> h = matmul(in, w1_);
  for (int64_t r = 0; r < h.rows(); ++r)
    for (int64_t c = 0; c < h.cols(); ++c)
      h.at2(r, c) += b1_.data[static_cast<size_t>(c)];
  pre_cache = h;
  for (auto& v : h.data) v = v > T(0) ? v : T(0);
  Tensor4T<T> out = matmul(h, w2_);
  for (int64_t r = 0; r < out.rows(); ++r)
    for (int64_t c = 0; c < out.cols(); ++c)
      out.at2(r, c) += b2_.data[static_cast<size_t>(c)];
  return out;
}

template <typename T>
Tensor4T<T> CBAM<T>::mlp_backward(const Tensor4T<T>& dout, const Tensor4T<T>& in,
                                  const Tensor4T<T>& pre_cache) {
  Tensor4T<T> h = pre_cache;
  for (auto& v : h.data) v = v > T(0) ? v : T(0);
  const Tensor4T<T> dw2 = matmul_at(h, dout);
  for (size_t i = 0; i < w2_grad_.data.size(); ++i) w2_grad_.data[i] += dw2.data[i];
  for (int64_t c = 0; c < dout.cols(); ++c) {
    double s = 0.0;
    for (int64_t r = 0; r < dout.rows(); ++r) s += static_cast<double>(dout.at2(r, c));
    b2_grad_.data[static_cast<size_t>(c)] += static_cast<T>(s);
  }
  Tensor4T<T> dh = matmul_bt(dout, w2_);
  for (size_t i = 0; i < dh.data.size(); ++i)
    if (!(pre_cache.data[i] > T(0))) dh.data[i] = T(0);
  const Tensor4T<T> dw1 = matmul_at(in, dh);
  for (size_t i = 0; i < w1_grad_.data.size(); ++i) w1_grad_.data[i] += dw1.data[i];
  for (int64_t c = 0; c < dh.cols(); ++c) {
    double s = 0.0;
    for (int64_t r = 0; r < dh.rows(); ++r) s += static_cast<double>(dh.at2(r, c));
    b1_grad_.data[static_cast<size_t>(c)] += static_cast<T>(s);
  }
  return matmul_bt(dh, w1_);
}

template <typename T>
Tensor4T<T> CBAM<T>::forward(const Tensor4T<T>& x, Mode mode) {
  if (x.c() != channels_)
    throw ContractError("cbam: channel mismatch, input " + x.shape_str());
  const int64_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int64_t plane = h * w;
  x_ = x;
  // Channel stage: shared MLP over average- and max-pooled descriptors.
  gap_ = global_avg_pool(x);
  gmp_ = Tensor4T<T>::matrix(n, c);
  gmp_argmax_.assign(static_cast<size_t>(n * c), 0);
  double margin = std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T* p = x.data.data() + (i * c + j) * plane;
      int64_t best = 0;
      T bv = p[0];
      T second = std::numeric_limits<T>::lowest();
      for (int64_t q = 1; q < plane; ++q) {
        if (p[q] > bv) {
          second = bv;
          bv = p[q];
          best = q;
        } else if (p[q] > second) {
          second = p[q];
        }
      }
      if (plane > 1 && (bv > T(0) || bv != second))
        margin = std::min(margin,
                          static_cast<double>(bv) - static_cast<double>(second));
      gmp_.at2(i, j) = bv;
      gmp_argmax_[static_cast<size_t>(i * c + j)] = best;
    }
  const Tensor4T<T> a_avg = mlp_forward(gap_, h_avg_pre_);
  const Tensor4T<T> a_max = mlp_forward(gmp_, h_max_pre_);
  mc_ = add(a_avg, a_max);
  for (auto& v : mc_.data) v = sigmoid(v);
  xc_ = x;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T s = mc_.at2(i, j);
      T* p = xc_.data.data() + (i * c + j) * plane;
      for (int64_t q = 0; q < plane; ++q) p[q] *= s;
    }
  // Spatial stage: sigmoid(conv(concat(mean_c, max_c))).
  pooled_ = Tensor4T<T>(n, 2, h, w);
  maxc_argmax_.assign(static_cast<size_t>(n * plane), 0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t q = 0; q < plane; ++q) {
      double sum = 0.0;
      int64_t best = 0;
      T bv = xc_.data[static_cast<size_t>((i * c) * plane + q)];
      T second = std::numeric_limits<T>::lowest();
      for (int64_t j = 1; j < c; ++j) {
        const T v = xc_.data[static_cast<size_t>((i * c + j) * plane + q)];
        if (v > bv) {
          second = bv;
          bv = v;
          best = j;
        } else if (v > second) {
          second = v;
        }
      }
      for (int64_t j = 0; j < c; ++j)
        sum += static_cast<double>(
            xc_.data[static_cast<size_t>((i * c + j) * plane + q)]);
      if (c > 1 && (bv > T(0) || bv != second))
        margin = std::min(margin,
                          static_cast<double>(bv) - static_cast<double>(second));
      pooled_.data[static_cast<size_t>((i * 2) * plane + q)] =
          static_cast<T>(sum / static_cast<double>(c));
      pooled_.data[static_cast<size_t>((i * 2 + 1) * plane + q)] = bv;
      maxc_argmax_[static_cast<size_t>(i * plane + q)] = best;
    }
  ms_ = spatial_conv_.forward(pooled_, mode);
  for (auto& v : ms_.data) v = sigmoid(v);
  Tensor4T<T> y = xc_;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      T* p = y.data.data() + (i * c + j) * plane;
      const T* m = ms_.data.data() + i * plane;
      for (int64_t q = 0; q < plane; ++q) p[q] *= m[q];
    }
  for (const T& v : h_avg_pre_.data)
    margin = std::min(margin, std::abs(static_cast<double>(v)));
  for (const T& v : h_max_pre_.data)
    margin = std::min(margin, std::abs(static_cast<double>(v)));
  kink_margin_ = margin;
  have_cache_ = true;
  return y;
}

template <typename T>
Tensor4T<T> CBAM<T>::backward(const Tensor4T<T>& dy) {
  this->require_cache(have_cache_, "cbam");
  have_cache_ = false;
  const int64_t n = dy.n(), c = dy.c(), h = dy.h(), w = dy.w();
  const int64_t plane = h * w;
  // y = Ms (.) xc
  Tensor4T<T> dxc = dy;
  Tensor4T<T> dms(n, 1, h, w);
  for (int64_t i = 0; i < n; ++i) {
    T* dm = dms.data.data() + i * plane;
    for (int64_t j = 0; j < c; ++j) {
      const T* dyp = dy.data.data() + (i * c + j) * plane;
      const T* xcp = xc_.data.data() + (i * c + j) * plane;
      T* dxcp = dxc.data.data() + (i * c + j) * plane;
      const T* m = ms_.data.data() + i * plane;
      for (int64_t q = 0; q < plane; ++q) {
        dm[q] += dyp[q] * xcp[q];
        dxcp[q] = dyp[q] * m[q];
      }
    }
  }
  // Through the sigmoid and the 7x7 conv.
  for (size_t i = 0; i < dms.data.size(); ++i) {
    const T s = ms_.data[i];
    dms.data[i] *= s * (T(1) - s);
  }
  const Tensor4T<T> dpooled = spatial_conv_.backward(dms);
  // mean_c spreads, max_c routes to the winning channel.
  for (int64_t i = 0; i < n; ++i)
    for (int64_t q = 0; q < plane; ++q) {
      const T dmean = dpooled.data[static_cast<size_t>((i * 2) * plane + q)];
      const T dmax = dpooled.data[static_cast<size_t>((i * 2 + 1) * plane + q)];
      const T spread = static_cast<T>(static_cast<double>(dmean) / static_cast<double>(c));
      for (int64_t j = 0; j < c; ++j)
        dxc.data[static_cast<size_t>((i * c + j) * plane + q)] += spread;
      const int64_t win = maxc_argmax_[static_cast<size_t>(i * plane + q)];
      dxc.data[static_cast<size_t>((i * c + win) * plane + q)] += dmax;
    }
  // xc = Mc (.) x
  Tensor4T<T> dx = dxc;
  Tensor4T<T> dmc = Tensor4T<T>::matrix(n, c);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T s = mc_.at2(i, j);
      const T* dxcp = dxc.data.data() + (i * c + j) * plane;
      const T* xp = x_.data.data() + (i * c + j) * plane;
      T* dxp = dx.data.data() + (i * c + j) * plane;
      double dm = 0.0;
      for (int64_t q = 0; q < plane; ++q) {
        dm += static_cast<double>(dxcp[q]) * static_cast<double>(xp[q]);
        dxp[q] = dxcp[q] * s;
      }
      dmc.at2(i, j) = static_cast<T>(dm);
    }
  Tensor4T<T> dlogits = dmc;
  for (size_t i = 0; i < dlogits.data.size(); ++i) {
    const T s = mc_.data[i];
    dlogits.data[i] *= s * (T(1) - s);
  }
  // The two MLP applications share weights; both contribute gradients.
  const Tensor4T<T> dgap = mlp_backward(dlogits, gap_, h_avg_pre_);
  const Tensor4T<T> dgmp = mlp_backward(dlogits, gmp_, h_max_pre_);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T g = static_cast<T>(static_cast<double>(dgap.at2(i, j)) /
                                 static_cast<double>(plane));
      T* dxp = dx.data.data() + (i * c + j) * plane;
      for (int64_t q = 0; q < plane; ++q) dxp[q] += g;
      dxp[gmp_argmax_[static_cast<size_t>(i * c + j)]] += dgmp.at2(i, j);
    }
  return dx;
}

template <typename T>
std::vector<ParamRef<T>> CBAM<T>::params() {
  std::vector<ParamRef<T>> out = {
      {"mlp.fc1.weight", &w1_, &w1_grad_}, {"mlp.fc1.bias", &b1_, &b1_grad_},
      {"mlp.fc2.weight", &w2_, &w2_grad_}, {"mlp.fc2.bias", &b2_, &b2_grad_}};
  for (auto& p : spatial_conv_.params())
    out.push_back({"spatial." + p.name, p.value, p.grad});
  return out;
}

#define KEXP_INSTANTIATE(T)     \
  template T sigmoid<T>(T);     \
  template class SEBlock<T>;    \
  template class CBAM<T>;

KEXP_INSTANTIATE(float)
KEXP_INSTANTIATE(double)

#undef KEXP_INSTANTIATE

}  // namespace kexp
