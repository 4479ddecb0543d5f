#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kexp/errors.hpp"

namespace kexp {

// Dense 4-D array [n, c, h, w], contiguous row-major. The float variant is
// the training currency; the double variant exists for gradient-check runs.
// A "matrix" R x C is the degenerate shape [R, C, 1, 1].
template <typename T>
struct Tensor4T {
  std::array<int64_t, 4> shape{0, 0, 0, 0};
  std::vector<T> data;

  Tensor4T() = default;
  Tensor4T(int64_t n, int64_t c, int64_t h, int64_t w, T fill = T(0))
      : shape{n, c, h, w} {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      throw ContractError("Tensor4: negative extent in " + shape_str(n, c, h, w));
    data.assign(static_cast<size_t>(n * c * h * w), fill);
  }

  static Tensor4T matrix(int64_t rows, int64_t cols, T fill = T(0)) {
    return Tensor4T(rows, cols, 1, 1, fill);
  }

  int64_t n() const { return shape[0]; }
  int64_t c() const { return shape[1]; }
  int64_t h() const { return shape[2]; }
  int64_t w() const { return shape[3]; }
  int64_t numel() const { return shape[0] * shape[1] * shape[2] * shape[3]; }

  bool is_matrix() const { return shape[2] == 1 && shape[3] == 1; }
  int64_t rows() const { return shape[0]; }
  int64_t cols() const { return shape[1]; }

  T& at(int64_t i, int64_t j, int64_t y, int64_t x) {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + y) * shape[3] + x)];
  }
  const T& at(int64_t i, int64_t j, int64_t y, int64_t x) const {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + y) * shape[3] + x)];
  }
  T& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
  const T& at2(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * shape[1] + c)];
  }

  bool same_shape(const Tensor4T& other) const { return shape == other.shape; }

  // Same data, new extents; total element count must be preserved.
  Tensor4T reshaped(int64_t n, int64_t c, int64_t h, int64_t w) const {
    if (n * c * h * w != numel())
      throw ContractError("reshape: element count mismatch, " + shape_str() +
                          " -> " + shape_str(n, c, h, w));
    Tensor4T out;
    out.shape = {n, c, h, w};
    out.data = data;
    return out;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  bool all_finite() const;

  std::string shape_str() const {
    return shape_str(shape[0], shape[1], shape[2], shape[3]);
  }
  static std::string shape_str(int64_t n, int64_t c, int64_t h, int64_t w) {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
  }
};

using Tensor4 = Tensor4T<float>;
using Tensor4d = Tensor4T<double>;

// ---- matrix kernels -------------------------------------------------------
// All contractions accumulate in 64-bit floating point and round to the
// storage type on write. Per-element summation order is fixed (ascending k),
// so multi-threaded runs are bit-identical to single-threaded ones.

// c[r][s] = sum_k a[r][k] * b[k][s]
template <typename T>
Tensor4T<T> matmul(const Tensor4T<T>& a, const Tensor4T<T>& b);

// c[r][s] = sum_k a[k][r] * b[k][s]   (a transposed on the fly)
template <typename T>
Tensor4T<T> matmul_at(const Tensor4T<T>& a, const Tensor4T<T>& b);

// c[r][s] = sum_k a[r][k] * b[s][k]   (b transposed on the fly)
template <typename T>
Tensor4T<T> matmul_bt(const Tensor4T<T>& a, const Tensor4T<T>& b);

template <typename T>
Tensor4T<T> transposed(const Tensor4T<T>& m);

// ---- convolution lowering -------------------------------------------------

// Rearranges k x k patches (stride s, zero padding p) into a matrix of shape
// (c*k*k) x (n*h_out*w_out). Column t holds the receptive field of output
// position t, rows ordered (channel, ky, kx).
template <typename T>
Tensor4T<T> im2col(const Tensor4T<T>& x, int k, int stride, int pad = 0);

// Exact adjoint of im2col: scatter-adds columns back into an [n,c,h,w] grid.
template <typename T>
Tensor4T<T> col2im(const Tensor4T<T>& cols, const std::array<int64_t, 4>& x_shape,
                   int k, int stride, int pad = 0);

inline int64_t conv_out_extent(int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// ---- reductions -----------------------------------------------------------

template <typename T>
struct ChannelMoments {
  std::vector<double> mean;  // per channel
  std::vector<double> var;   // biased (divide by count)
};

// Mean and biased variance over (batch, spatial) per channel, two-pass in
// 64-bit.
template <typename T>
ChannelMoments<T> moments(const Tensor4T<T>& x);

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor4T<T> add(const Tensor4T<T>& a, const Tensor4T<T>& b);

template <typename T>
Tensor4T<T> mul(const Tensor4T<T>& a, const Tensor4T<T>& b);

template <typename T>
Tensor4T<T> scale(const Tensor4T<T>& a, T s);

// y[i,j,:,:] = x[i,j,:,:] * s[0,j,0,0]; s must be shaped [1,c,1,1].
template <typename T>
Tensor4T<T> mul_channels(const Tensor4T<T>& x, const Tensor4T<T>& s);

// y[i,j,:,:] = x[i,j,:,:] + s[0,j,0,0]; s must be shaped [1,c,1,1].
template <typename T>
Tensor4T<T> add_channels(const Tensor4T<T>& x, const Tensor4T<T>& s);

template <typename T, typename F>
Tensor4T<T> map(const Tensor4T<T>& a, F f) {
  Tensor4T<T> out = a;
  for (auto& v : out.data) v = f(v);
  return out;
}

template <typename T>
void check_same_shape(const Tensor4T<T>& a, const Tensor4T<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() +
                        " vs " + b.shape_str());
}

}  // namespace kexp
