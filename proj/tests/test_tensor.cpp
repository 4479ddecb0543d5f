#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "kexp/rng.hpp"
#include "kexp/tensor.hpp"

using namespace kexp;

namespace {

Tensor4 random_matrix(int64_t r, int64_t c, Rng& rng) {
  Tensor4 m = Tensor4::matrix(r, c);
  for (auto& v : m.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  return m;
}

// brute-force triple-loop reference
template <typename T>
Tensor4T<T> matmul_naive(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  Tensor4T<T> c = Tensor4T<T>::matrix(a.rows(), b.cols());
  for (int64_t r = 0; r < a.rows(); ++r)
    for (int64_t s = 0; s < b.cols(); ++s) {
      double acc = 0.0;
      for (int64_t k = 0; k < a.cols(); ++k)
        acc += static_cast<double>(a.at2(r, k)) * static_cast<double>(b.at2(k, s));
      c.at2(r, s) = static_cast<T>(acc);
    }
  return c;
}

// direct sliding-window convolution (single filter bank), no padding
template <typename T>
Tensor4T<T> conv_naive(const Tensor4T<T>& x, const Tensor4T<T>& w) {
  const int64_t n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
  const int64_t cout = w.n(), k = w.h();
  const int64_t ho = h - k + 1, wo = wd - k + 1;
  Tensor4T<T> y(n, cout, ho, wo);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t f = 0; f < cout; ++f)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int64_t j = 0; j < cin; ++j)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx)
                acc += static_cast<double>(x.at(i, j, oy + ky, ox + kx)) *
                       static_cast<double>(w.at(f, j, ky, kx));
          y.at(i, f, oy, ox) = static_cast<T>(acc);
        }
  return y;
}

}  // namespace

TEST_CASE("tensor indexing round-trips the documented offset formula") {
  Tensor4 t(2, 3, 4, 5);
  for (int64_t i = 0; i < t.numel(); ++i) t.data[static_cast<size_t>(i)] = static_cast<float>(i);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 5; ++x)
          CHECK(t.at(i, j, y, x) == static_cast<float>(((i * 3 + j) * 4 + y) * 5 + x));
  CHECK(t.numel() == static_cast<int64_t>(t.data.size()));
}

TEST_CASE("matmul identity") {
  Rng rng(1);
  Tensor4 eye = Tensor4::matrix(3, 3);
  for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.f;
  const Tensor4 m = random_matrix(3, 4, rng);
  const Tensor4 out = matmul(eye, m);
  CHECK(out.data == m.data);
}

TEST_CASE("matmul hand arithmetic") {
  Tensor4 a = Tensor4::matrix(2, 2);
  a.data = {1, 2, 3, 4};
  Tensor4 b = Tensor4::matrix(2, 1);
  b.data = {5, 6};
  const Tensor4 c = matmul(a, b);
  CHECK(c.at2(0, 0) == doctest::Approx(17));
  CHECK(c.at2(1, 0) == doctest::Approx(39));
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(42);
  const Tensor4 a = random_matrix(7, 5, rng);
  const Tensor4 b = random_matrix(5, 4, rng);
  const Tensor4 got = matmul(a, b);
  const Tensor4 want = matmul_naive(a, b);
  for (size_t i = 0; i < got.data.size(); ++i)
    CHECK(std::abs(got.data[i] - want.data[i]) < 1e-5f);

  // 64-bit mode against the same oracle
  Tensor4d ad = Tensor4d::matrix(7, 5), bd = Tensor4d::matrix(5, 4);
  for (size_t i = 0; i < ad.data.size(); ++i) ad.data[i] = rng.uniform(-2, 2);
  for (size_t i = 0; i < bd.data.size(); ++i) bd.data[i] = rng.uniform(-2, 2);
  const Tensor4d gd = matmul(ad, bd);
  const Tensor4d wd = matmul_naive(ad, bd);
  for (size_t i = 0; i < gd.data.size(); ++i)
    CHECK(std::abs(gd.data[i] - wd.data[i]) < 1e-12);
}

TEST_CASE("matmul transposed variants agree with explicit transposition") {
  Rng rng(9);
  const Tensor4 a = random_matrix(6, 3, rng);
  const Tensor4 b = random_matrix(6, 4, rng);
  const Tensor4 at_b = matmul_at(a, b);  // a^T x b -> [3,4]
  const Tensor4 want = matmul(transposed(a), b);
  REQUIRE(at_b.shape == want.shape);
  for (size_t i = 0; i < want.data.size(); ++i)
    CHECK(at_b.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));

  const Tensor4 c = random_matrix(5, 3, rng);
  const Tensor4 a_bt = matmul_bt(a, c);  // a x c^T -> [6,5]
  const Tensor4 want2 = matmul(a, transposed(c));
  REQUIRE(a_bt.shape == want2.shape);
  for (size_t i = 0; i < want2.data.size(); ++i)
    CHECK(a_bt.data[i] == doctest::Approx(want2.data[i]).epsilon(1e-5));
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  const Tensor4 a = Tensor4::matrix(2, 3);
  const Tensor4 b = Tensor4::matrix(4, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[2,3,1,1]"), ContractError);
}

TEST_CASE("im2col single whole-image patch") {
  Tensor4 x(1, 1, 3, 3);
  for (int i = 0; i < 9; ++i) x.data[static_cast<size_t>(i)] = static_cast<float>(i + 1);
  const Tensor4 cols = im2col(x, 3, 1);
  CHECK(cols.rows() == 9);
  CHECK(cols.cols() == 1);
  for (int i = 0; i < 9; ++i)
    CHECK(cols.data[static_cast<size_t>(i)] == x.data[static_cast<size_t>(i)]);
}

TEST_CASE("im2col columns equal direct patch extraction") {
  Rng rng(5);
  Tensor4 x(1, 1, 4, 4);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
  const Tensor4 cols = im2col(x, 3, 1);
  CHECK(cols.rows() == 9);
  CHECK(cols.cols() == 4);
  for (int64_t oy = 0; oy < 2; ++oy)
    for (int64_t ox = 0; ox < 2; ++ox) {
      const int64_t t = oy * 2 + ox;
      for (int64_t ky = 0; ky < 3; ++ky)
        for (int64_t kx = 0; kx < 3; ++kx)
          CHECK(cols.at2(ky * 3 + kx, t) == x.at(0, 0, oy + ky, ox + kx));
    }
}

TEST_CASE("col2im with unit kernel is the inverse of im2col") {
  Rng rng(6);
  Tensor4 x(2, 3, 4, 4);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
  const Tensor4 cols = im2col(x, 1, 1);
  const Tensor4 back = col2im(cols, x.shape, 1, 1);
  CHECK(back.data == x.data);
}

TEST_CASE("im2col rejects kernels larger than the input") {
  const Tensor4 x(1, 1, 3, 3);
  CHECK_THROWS_AS(im2col(x, 4, 1), ContractError);
}

TEST_CASE("im2col + matmul equals sliding-window convolution (exhaustive sweep)") {
  Rng rng(77);
  for (int64_t n = 1; n <= 2; ++n)
    for (int64_t cin = 1; cin <= 3; ++cin)
      for (int64_t h = 3; h <= 8; ++h)
        for (int64_t k = 1; k <= 3; k += 2) {
          if (k > h) continue;
          Tensor4 x(n, cin, h, h);
          for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
          Tensor4 w(2, cin, k, k);
          for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
          const Tensor4 cols = im2col(x, static_cast<int>(k), 1);
          const Tensor4 wmat = w.reshaped(2, cin * k * k, 1, 1);
          const Tensor4 ymat = matmul(wmat, cols);
          const Tensor4 want = conv_naive(x, w);
          const int64_t ho = h - k + 1;
          for (int64_t i = 0; i < n; ++i)
            for (int64_t f = 0; f < 2; ++f)
              for (int64_t oy = 0; oy < ho; ++oy)
                for (int64_t ox = 0; ox < ho; ++ox)
                  CHECK(ymat.at2(f, (i * ho + oy) * ho + ox) ==
                        doctest::Approx(want.at(i, f, oy, ox)).epsilon(1e-4));
        }
}

TEST_CASE("col2im is the linear adjoint of im2col") {
  Rng rng(99);
  Tensor4d x(2, 3, 6, 6);
  for (auto& v : x.data) v = rng.uniform(-1, 1);
  const int k = 3;
  const Tensor4d cols = im2col(x, k, 1);
  Tensor4d y = Tensor4d::matrix(cols.rows(), cols.cols());
  for (auto& v : y.data) v = rng.uniform(-1, 1);
  double lhs = 0.0;
  for (size_t i = 0; i < cols.data.size(); ++i) lhs += cols.data[i] * y.data[i];
  const Tensor4d back = col2im(y, x.shape, k, 1);
  double rhs = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * back.data[i];
  CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("moments of a constant tensor") {
  Tensor4 x(2, 2, 3, 3, 5.f);
  const auto m = moments(x);
  for (double v : m.mean) CHECK(v == doctest::Approx(5.0));
  for (double v : m.var) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("moments of a two-point channel") {
  Tensor4 x(2, 1, 1, 1);
  x.data = {0.f, 2.f};
  const auto m = moments(x);
  CHECK(m.mean[0] == doctest::Approx(1.0));
  CHECK(m.var[0] == doctest::Approx(1.0));
}

TEST_CASE("moments match a two-pass reference") {
  Rng rng(3);
  Tensor4 x(2, 3, 4, 4);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-3, 3));
  const auto m = moments(x);
  for (int64_t j = 0; j < 3; ++j) {
    double sum = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t y = 0; y < 4; ++y)
        for (int64_t xx = 0; xx < 4; ++xx) {
          sum += x.at(i, j, y, xx);
          ++count;
        }
    const double mean = sum / count;
    double sq = 0.0;
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t y = 0; y < 4; ++y)
        for (int64_t xx = 0; xx < 4; ++xx) {
          const double d = x.at(i, j, y, xx) - mean;
          sq += d * d;
        }
    const double var = sq / count;
    CHECK(std::abs(m.mean[static_cast<size_t>(j)] - mean) <
          1e-6 * std::max(1.0, std::abs(mean)));
    CHECK(std::abs(m.var[static_cast<size_t>(j)] - var) <
          1e-6 * std::max(1.0, var));
  }
}

TEST_CASE("moments rejects empty tensors") {
  Tensor4 x;
  CHECK_THROWS_AS(moments(x), ContractError);
}

TEST_CASE("elementwise identities") {
  Rng rng(8);
  Tensor4 x(1, 2, 2, 2);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
  CHECK(add(x, Tensor4(1, 2, 2, 2, 0.f)).data == x.data);
  CHECK(mul(x, Tensor4(1, 2, 2, 2, 1.f)).data == x.data);
}

TEST_CASE("per-channel broadcast scale") {
  Tensor4 x(1, 2, 2, 2, 1.f);
  Tensor4 s(1, 2, 1, 1);
  s.data = {2.f, 3.f};
  const Tensor4 y = mul_channels(x, s);
  for (int64_t q = 0; q < 4; ++q) {
    CHECK(y.data[static_cast<size_t>(q)] == 2.f);
    CHECK(y.data[static_cast<size_t>(4 + q)] == 3.f);
  }
}

TEST_CASE("elementwise shape mismatch raises") {
  const Tensor4 a(1, 2, 2, 2);
  const Tensor4 b(1, 2, 2, 3);
  CHECK_THROWS_AS(add(a, b), ContractError);
  CHECK_THROWS_AS(mul_channels(a, Tensor4(1, 3, 1, 1)), ContractError);
}

TEST_CASE("rng: identical seeds give identical streams") {
  Rng a(123456), b(123456);
  for (int i = 0; i < 1000000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: substreams with distinct indices are pairwise distinct") {
  const int streams = 8, draws = 1000;
  std::vector<std::vector<uint64_t>> outs;
  for (int i = 0; i < streams; ++i) {
    Rng r = Rng::child(42, static_cast<uint64_t>(i));
    std::vector<uint64_t> v;
    for (int d = 0; d < draws; ++d) v.push_back(r.next_u64());
    outs.push_back(std::move(v));
  }
  for (int i = 0; i < streams; ++i)
    for (int j = i + 1; j < streams; ++j) CHECK(outs[static_cast<size_t>(i)] != outs[static_cast<size_t>(j)]);
}

TEST_CASE("rng: children do not depend on sibling consumption") {
  Rng a = Rng::child(7, 3);
  Rng sibling = Rng::child(7, 2);
  for (int i = 0; i < 100; ++i) (void)sibling.next_u64();
  Rng b = Rng::child(7, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: uniform_int stays in range and hits both endpoints") {
  Rng r(11);
  std::set<int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const int64_t v = r.uniform_int(2, 5);
    REQUIRE(v >= 2);
    REQUIRE(v <= 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 4);
}
