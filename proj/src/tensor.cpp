#include "kexp/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "kexp/parallel.hpp"

namespace kexp {

template <typename T>
bool Tensor4T<T>::all_finite() const {
  for (const T& v : data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

namespace {

template <typename T>
void check_matrix(const Tensor4T<T>& m, const char* op) {
  if (!m.is_matrix())
    throw ContractError(std::string(op) + ": expected a matrix [R,C,1,1], got " +
                        m.shape_str());
}

}  // namespace

template <typename T>
Tensor4T<T> matmul(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw ContractError("matmul: inner extents disagree, " + a.shape_str() +
                        " x " + b.shape_str());
  const int64_t R = a.rows(), K = a.cols(), S = b.cols();
  Tensor4T<T> c = Tensor4T<T>::matrix(R, S);
  const T* ad = a.data.data();
  const T* bd = b.data.data();
  T* cd = c.data.data();
  parallel_for(S, [&](int64_t s0, int64_t s1) {
    const int64_t len = s1 - s0;
    std::vector<double> acc(static_cast<size_t>(len));
    for (int64_t r = 0; r < R; ++r) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* arow = ad + r * K;
      for (int64_t k = 0; k < K; ++k) {
        const double av = static_cast<double>(arow[k]);
        const T* brow = bd + k * S + s0;
        for (int64_t s = 0; s < len; ++s)
          acc[static_cast<size_t>(s)] += av * static_cast<double>(brow[s]);
      }
      T* crow = cd + r * S + s0;
      for (int64_t s = 0; s < len; ++s)
        crow[s] = static_cast<T>(acc[static_cast<size_t>(s)]);
    }
  });
  return c;
}

template <typename T>
Tensor4T<T> matmul_at(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  check_matrix(a, "matmul_at");
  check_matrix(b, "matmul_at");
  if (a.rows() != b.rows())
    throw ContractError("matmul_at: inner extents disagree, " + a.shape_str() +
                        "^T x " + b.shape_str());
  const int64_t K = a.rows(), R = a.cols(), S = b.cols();
  Tensor4T<T> c = Tensor4T<T>::matrix(R, S);
  const T* ad = a.data.data();
  const T* bd = b.data.data();
  T* cd = c.data.data();
  parallel_for(S, [&](int64_t s0, int64_t s1) {
    const int64_t len = s1 - s0;
    std::vector<double> acc(static_cast<size_t>(R * len), 0.0);
    for (int64_t k = 0; k < K; ++k) {
      const T* arow = ad + k * R;
      const T* brow = bd + k * S + s0;
      for (int64_t r = 0; r < R; ++r) {
        const double av = static_cast<double>(arow[r]);
        double* accrow = acc.data() + r * len;
        for (int64_t s = 0; s < len; ++s)
          accrow[s] += av * static_cast<double>(brow[s]);
      }
    }
    for (int64_t r = 0; r < R; ++r) {
      T* crow = cd + r * S + s0;
      const double* accrow = acc.data() + r * len;
      for (int64_t s = 0; s < len; ++s) crow[s] = static_cast<T>(accrow[s]);
    }
  });
  return c;
}

template <typename T>
Tensor4T<T> matmul_bt(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  check_matrix(a, "matmul_bt");
  check_matrix(b, "matmul_bt");
  if (a.cols() != b.cols())
    throw ContractError("matmul_bt: inner extents disagree, " + a.shape_str() +
                        " x " + b.shape_str() + "^T");
  const int64_t R = a.rows(), K = a.cols(), S = b.rows();
  Tensor4T<T> c = Tensor4T<T>::matrix(R, S);
  const T* ad = a.data.data();
  const T* bd = b.data.data();
  T* cd = c.data.data();
  parallel_for(R * S, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int64_t r = t / S, s = t % S;
      const T* arow = ad + r * K;
      const T* brow = bd + s * K;
      // Four fixed lanes keep the reduction tree shape-independent of the
      // thread count while letting the compiler vectorize.
      double l0 = 0, l1 = 0, l2 = 0, l3 = 0;
      int64_t k = 0;
      for (; k + 4 <= K; k += 4) {
        l0 += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
        l1 += static_cast<double>(arow[k + 1]) * static_cast<double>(brow[k + 1]);
        l2 += static_cast<double>(arow[k + 2]) * static_cast<double>(brow[k + 2]);
        l3 += static_cast<double>(arow[k + 3]) * static_cast<double>(brow[k + 3]);
      }
      for (; k < K; ++k)
        l0 += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
      cd[t] = static_cast<T>((l0 + l1) + (l2 + l3));
    }
  });
  return c;
}

template <typename T>
Tensor4T<T> transposed(const Tensor4T<T>& m) {
  check_matrix(m, "transposed");
  const int64_t R = m.rows(), C = m.cols();
  Tensor4T<T> out = Tensor4T<T>::matrix(C, R);
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out.at2(c, r) = m.at2(r, c);
  return out;
}

template <typename T>
Tensor4T<T> im2col(const Tensor4T<T>& x, int k, int stride, int pad) {
  const int64_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  if (k <= 0 || stride <= 0 || pad < 0)
    throw ContractError("im2col: bad kernel/stride/pad");
  if (k > h + 2 * pad || k > w + 2 * pad)
    throw ContractError("im2col: kernel " + std::to_string(k) +
                        " larger than padded input " + x.shape_str());
  const int64_t ho = conv_out_extent(h, k, stride, pad);
  const int64_t wo = conv_out_extent(w, k, stride, pad);
  const int64_t rows = c * k * k;
  const int64_t cols_n = n * ho * wo;
  Tensor4T<T> cols = Tensor4T<T>::matrix(rows, cols_n);
  const T* xd = x.data.data();
  T* cd = cols.data.data();
  parallel_for(cols_n, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int64_t i = t / (ho * wo);
      const int64_t rem = t % (ho * wo);
      const int64_t oy = rem / wo, ox = rem % wo;
      const int64_t base_y = oy * stride - pad;
      const int64_t base_x = ox * stride - pad;
      for (int64_t j = 0; j < c; ++j) {
        const T* plane = xd + (i * c + j) * h * w;
        for (int64_t ky = 0; ky < k; ++ky) {
          const int64_t sy = base_y + ky;
          for (int64_t kx = 0; kx < k; ++kx) {
            const int64_t sx = base_x + kx;
            const int64_t row = (j * k + ky) * k + kx;
            T v = T(0);
            if (sy >= 0 && sy < h && sx >= 0 && sx < w) v = plane[sy * w + sx];
            cd[row * cols_n + t] = v;
          }
        }
      }
    }
  });
  return cols;
}

template <typename T>
Tensor4T<T> col2im(const Tensor4T<T>& cols, const std::array<int64_t, 4>& x_shape,
                   int k, int stride, int pad) {
  const int64_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  const int64_t ho = conv_out_extent(h, k, stride, pad);
  const int64_t wo = conv_out_extent(w, k, stride, pad);
  if (cols.rows() != c * k * k || cols.cols() != n * ho * wo)
    throw ContractError("col2im: column matrix " + cols.shape_str() +
                        " does not match target " +
                        Tensor4T<T>::shape_str(n, c, h, w));
  Tensor4T<T> x(n, c, h, w);
  const int64_t cols_n = cols.cols();
  const T* cd = cols.data.data();
  T* xd = x.data.data();
  // Scatter-add; parallel over images since their output regions are disjoint.
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    // each thread owns images [i0, i1)
    for (int64_t i = i0; i < i1; ++i) {
      for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
          const int64_t t = (i * ho + oy) * wo + ox;
          const int64_t base_y = oy * stride - pad;
          const int64_t base_x = ox * stride - pad;
          for (int64_t j = 0; j < c; ++j) {
            T* plane = xd + (i * c + j) * h * w;
            for (int64_t ky = 0; ky < k; ++ky) {
              const int64_t sy = base_y + ky;
              if (sy < 0 || sy >= h) continue;
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t sx = base_x + kx;
                if (sx < 0 || sx >= w) continue;
                const int64_t row = (j * k + ky) * k + kx;
                plane[sy * w + sx] += cd[row * cols_n + t];
              }
            }
          }
        }
      }
    }
  }, 0, 1);
  return x;
}

template <typename T>
ChannelMoments<T> moments(const Tensor4T<T>& x) {
  const int64_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int64_t count = n * h * w;
  if (count < 1 || c < 1) throw ContractError("moments: empty tensor " + x.shape_str());
  ChannelMoments<T> m;
  m.mean.assign(static_cast<size_t>(c), 0.0);
  m.var.assign(static_cast<size_t>(c), 0.0);
  for (int64_t j = 0; j < c; ++j) {
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const T* plane = x.data.data() + (i * c + j) * h * w;
      for (int64_t p = 0; p < h * w; ++p) sum += static_cast<double>(plane[p]);
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const T* plane = x.data.data() + (i * c + j) * h * w;
      for (int64_t p = 0; p < h * w; ++p) {
        const double d = static_cast<double>(plane[p]) - mean;
        sq += d * d;
      }
    }
    m.mean[static_cast<size_t>(j)] = mean;
    m.var[static_cast<size_t>(j)] = sq / static_cast<double>(count);
  }
  return m;
}

template <typename T>
Tensor4T<T> add(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  check_same_shape(a, b, "add");
  Tensor4T<T> out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

template <typename T>
Tensor4T<T> mul(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor4T<T> out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

template <typename T>
Tensor4T<T> scale(const Tensor4T<T>& a, T s) {
  Tensor4T<T> out = a;
  for (auto& v : out.data) v *= s;
  return out;
}

namespace {

template <typename T>
void check_channel_vec(const Tensor4T<T>& x, const Tensor4T<T>& s, const char* op) {
  if (s.n() != 1 || s.h() != 1 || s.w() != 1 || s.c() != x.c())
    throw ContractError(std::string(op) + ": broadcast operand must be [1," +
                        std::to_string(x.c()) + ",1,1], got " + s.shape_str());
}

}  // namespace

template <typename T>
Tensor4T<T> mul_channels(const Tensor4T<T>& x, const Tensor4T<T>& s) {
  check_channel_vec(x, s, "mul_channels");
  Tensor4T<T> out = x;
  const int64_t plane = x.h() * x.w();
  for (int64_t i = 0; i < x.n(); ++i)
    for (int64_t j = 0; j < x.c(); ++j) {
      const T f = s.data[static_cast<size_t>(j)];
      T* p = out.data.data() + (i * x.c() + j) * plane;
      for (int64_t q = 0; q < plane; ++q) p[q] *= f;
    }
  return out;
}

template <typename T>
Tensor4T<T> add_channels(const Tensor4T<T>& x, const Tensor4T<T>& s) {
  check_channel_vec(x, s, "add_channels");
  Tensor4T<T> out = x;
  const int64_t plane = x.h() * x.w();
  for (int64_t i = 0; i < x.n(); ++i)
    for (int64_t j = 0; j < x.c(); ++j) {
      const T f = s.data[static_cast<size_t>(j)];
      T* p = out.data.data() + (i * x.c() + j) * plane;
      for (int64_t q = 0; q < plane; ++q) p[q] += f;
    }
  return out;
}

#define KEXP_INSTANTIATE(T)                                                          \
  template struct Tensor4T<T>;                                                       \
  template Tensor4T<T> matmul<T>(const Tensor4T<T>&, const Tensor4T<T>&);            \
  template Tensor4T<T> matmul_at<T>(const Tensor4T<T>&, const Tensor4T<T>&);         \
  template Tensor4T<T> matmul_bt<T>(const Tensor4T<T>&, const Tensor4T<T>&);         \
  template Tensor4T<T> transposed<T>(const Tensor4T<T>&);                            \
  template Tensor4T<T> im2col<T>(const Tensor4T<T>&, int, int, int);                 \
  template Tensor4T<T> col2im<T>(const Tensor4T<T>&, const std::array<int64_t, 4>&,  \
                                 int, int, int);                                     \
  template ChannelMoments<T> moments<T>(const Tensor4T<T>&);                         \
  template Tensor4T<T> add<T>(const Tensor4T<T>&, const Tensor4T<T>&);               \
  template Tensor4T<T> mul<T>(const Tensor4T<T>&, const Tensor4T<T>&);               \
  template Tensor4T<T> scale<T>(const Tensor4T<T>&, T);                              \
  template Tensor4T<T> mul_channels<T>(const Tensor4T<T>&, const Tensor4T<T>&);      \
  template Tensor4T<T> add_channels<T>(const Tensor4T<T>&, const Tensor4T<T>&);

KEXP_INSTANTIATE(float)
KEXP_INSTANTIATE(double)

#undef KEXP_INSTANTIATE

}  // namespace kexp
