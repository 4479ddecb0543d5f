#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kexp/gradcheck.hpp"
#include "kexp/nn.hpp"

using namespace kexp;

namespace {

Tensor4 random_tensor(int64_t n, int64_t c, int64_t h, int64_t w, Rng& rng) {
  Tensor4 t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("conv2d reproduces the 224 -> 222 stage shape") {
  Rng init(0);
  Conv2d<float> conv(3, 5, 3, init);
  const Tensor4 x(1, 3, 224, 224, 0.1f);
  const Tensor4 y = conv.forward(x, Mode::Train);
  CHECK(y.shape == std::array<int64_t, 4>{1, 5, 222, 222});
}

TEST_CASE("conv2d with a centered delta kernel crops the interior") {
  Rng init(1), rng(2);
  Conv2d<float> conv(1, 1, 3, init);
  conv.weight().zero();
  conv.weight().at(0, 0, 1, 1) = 1.f;
  conv.bias().zero();
  const Tensor4 x = random_tensor(1, 1, 6, 6, rng);
  const Tensor4 y = conv.forward(x, Mode::Train);
  REQUIRE(y.shape == std::array<int64_t, 4>{1, 1, 4, 4});
  for (int64_t oy = 0; oy < 4; ++oy)
    for (int64_t ox = 0; ox < 4; ++ox)
      CHECK(y.at(0, 0, oy, ox) == doctest::Approx(x.at(0, 0, oy + 1, ox + 1)));
}

TEST_CASE("conv2d all-ones kernel sums each window") {
  Rng init(1), rng(3);
  Conv2d<float> conv(1, 1, 3, init);
  conv.weight().fill(1.f);
  conv.bias().zero();
  const Tensor4 x = random_tensor(1, 1, 4, 4, rng);
  const Tensor4 y = conv.forward(x, Mode::Train);
  for (int64_t oy = 0; oy < 2; ++oy)
    for (int64_t ox = 0; ox < 2; ++ox) {
      double want = 0.0;
      for (int64_t ky = 0; ky < 3; ++ky)
        for (int64_t kx = 0; kx < 3; ++kx) want += x.at(0, 0, oy + ky, ox + kx);
      CHECK(y.at(0, 0, oy, ox) == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Rng init(0);
  Conv2d<float> conv(3, 5, 3, init);
  CHECK_THROWS_AS(conv.forward(Tensor4(1, 2, 8, 8), Mode::Train), ContractError);
}

TEST_CASE("conv2d is linear in its input when bias is zero") {
  Rng init(4), rng(5);
  Conv2d<float> conv(2, 3, 3, init);
  conv.bias().zero();
  const Tensor4 x1 = random_tensor(1, 2, 6, 6, rng);
  const Tensor4 x2 = random_tensor(1, 2, 6, 6, rng);
  const float a = 1.7f, b = -0.6f;
  Tensor4 mix = add(scale(x1, a), scale(x2, b));
  const Tensor4 y_mix = conv.forward(mix, Mode::Train);
  const Tensor4 y1 = conv.forward(x1, Mode::Train);
  const Tensor4 y2 = conv.forward(x2, Mode::Train);
  for (size_t i = 0; i < y_mix.data.size(); ++i)
    CHECK(std::abs(y_mix.data[i] - (a * y1.data[i] + b * y2.data[i])) < 1e-4f);
}

TEST_CASE("batchnorm train mode on constant input is near zero") {
  BatchNorm2d<float> bn(2);
  const Tensor4 x(2, 2, 3, 3, 4.2f);
  const Tensor4 y = bn.forward(x, Mode::Train);
  for (float v : y.data) CHECK(std::abs(v) <= 1e-3f);
}

TEST_CASE("batchnorm standardizes a two-point channel") {
  BatchNorm2d<double> bn(1, 1e-12);
  Tensor4d x(2, 1, 1, 1);
  x.data = {0.0, 2.0};
  const Tensor4d y = bn.forward(x, Mode::Train);
  CHECK(y.data[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y.data[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("batchnorm train-mode pre-affine output has zero mean, unit variance") {
  Rng rng(6);
  BatchNorm2d<double> bn(3);
  Tensor4d x(4, 3, 5, 5);
  for (auto& v : x.data) v = rng.uniform(-2.0, 3.0);
  const Tensor4d y = bn.forward(x, Mode::Train);
  const auto m = moments(y);
  for (double v : m.mean) CHECK(std::abs(v) <= 1e-5);
  for (double v : m.var) CHECK(std::abs(v - 1.0) <= 1e-3);
}

TEST_CASE("batchnorm updates running stats with the unbiased variance") {
  BatchNorm2d<float> bn(1);
  Tensor4 x(2, 1, 1, 2);
  x.data = {0.f, 2.f, 4.f, 6.f};  // mean 3, biased var 5, unbiased 20/3
  (void)bn.forward(x, Mode::Train);
  CHECK(bn.running_mean().data[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 3.0));
  CHECK(bn.running_var().data[0] ==
        doctest::Approx(0.9 * 1.0 + 0.1 * (5.0 * 4.0 / 3.0)).epsilon(1e-5));
}

TEST_CASE("batchnorm eval mode depends only on running stats") {
  Rng rng(7);
  BatchNorm2d<float> bn(2);
  for (int i = 0; i < 3; ++i) {
    Tensor4 x = random_tensor(2, 2, 4, 4, rng);
    (void)bn.forward(x, Mode::Train);
  }
  const Tensor4 probe = random_tensor(1, 2, 2, 2, rng);
  const Tensor4 y = bn.forward(probe, Mode::Eval);
  for (int64_t j = 0; j < 2; ++j) {
    const double mean = bn.running_mean().data[static_cast<size_t>(j)];
    const double var = bn.running_var().data[static_cast<size_t>(j)];
    for (int64_t q = 0; q < 4; ++q) {
      const double xv = probe.data[static_cast<size_t>(j * 4 + q)];
      const double want = (xv - mean) / std::sqrt(var + 1e-5);
      CHECK(y.data[static_cast<size_t>(j * 4 + q)] ==
            doctest::Approx(want).epsilon(1e-4));
    }
  }
}

TEST_CASE("batchnorm train mode rejects single-element channels") {
  BatchNorm2d<float> bn(3);
  CHECK_THROWS_AS(bn.forward(Tensor4(1, 3, 1, 1), Mode::Train), ContractError);
}

TEST_CASE("relu definition and identity region") {
  ReLU<float> relu;
  Tensor4 x(1, 3, 1, 1);
  x.data = {-1.f, 0.f, 2.f};
  const Tensor4 y = relu.forward(x, Mode::Train);
  CHECK(y.data == std::vector<float>{0.f, 0.f, 2.f});

  Tensor4 pos(1, 2, 2, 2, 0.5f);
  CHECK(relu.forward(pos, Mode::Train).data == pos.data);
}

TEST_CASE("relu subgradient at zero is zero") {
  ReLU<float> relu;
  Tensor4 x(1, 3, 1, 1);
  x.data = {-1.f, 0.f, 2.f};
  (void)relu.forward(x, Mode::Train);
  const Tensor4 dx = relu.backward(Tensor4(1, 3, 1, 1, 1.f));
  CHECK(dx.data == std::vector<float>{0.f, 0.f, 1.f});
}

TEST_CASE("maxpool halves the paper's stage extents") {
  MaxPool2d<float> pool;
  CHECK(pool.forward(Tensor4(1, 1, 222, 222), Mode::Train).shape ==
        std::array<int64_t, 4>{1, 1, 111, 111});
  CHECK(pool.forward(Tensor4(1, 1, 109, 109), Mode::Train).shape ==
        std::array<int64_t, 4>{1, 1, 54, 54});
}

TEST_CASE("maxpool picks the window max and routes the gradient to it") {
  MaxPool2d<float> pool;
  Tensor4 x(1, 1, 2, 2);
  x.data = {1.f, 2.f, 3.f, 4.f};
  const Tensor4 y = pool.forward(x, Mode::Train);
  REQUIRE(y.numel() == 1);
  CHECK(y.data[0] == 4.f);
  const Tensor4 dx = pool.backward(Tensor4(1, 1, 1, 1, 1.f));
  CHECK(dx.data == std::vector<float>{0.f, 0.f, 0.f, 1.f});
}

TEST_CASE("maxpool breaks ties toward the first element in scan order") {
  MaxPool2d<float> pool;
  Tensor4 x(1, 1, 2, 2, 7.f);
  (void)pool.forward(x, Mode::Train);
  const Tensor4 dx = pool.backward(Tensor4(1, 1, 1, 1, 1.f));
  CHECK(dx.data == std::vector<float>{1.f, 0.f, 0.f, 0.f});
}

TEST_CASE("dense identity weights pass the input through") {
  Rng init(8);
  Dense<float> dense(3, 3, init);
  dense.weight().zero();
  for (int i = 0; i < 3; ++i) dense.weight().at2(i, i) = 1.f;
  dense.bias().zero();
  Tensor4 x = Tensor4::matrix(2, 3);
  x.data = {1.f, 2.f, 3.f, 4.f, 5.f, 6.f};
  CHECK(dense.forward(x, Mode::Train).data == x.data);
}

TEST_CASE("dense head layer emits two class scores") {
  Rng init(9);
  Dense<float> dense(64, 2, init);
  const Tensor4 y = dense.forward(Tensor4::matrix(5, 64, 0.1f), Mode::Train);
  CHECK(y.shape == std::array<int64_t, 4>{5, 2, 1, 1});
}

TEST_CASE("dense rejects mismatched input width") {
  Rng init(10);
  Dense<float> dense(8, 4, init);
  CHECK_THROWS_AS(dense.forward(Tensor4::matrix(2, 7), Mode::Train), ContractError);
}

TEST_CASE("dropout rate 0 and eval mode are identities") {
  Rng rng(11);
  Dropout<float> none(0.f, Rng(1));
  Dropout<float> half(0.5f, Rng(2));
  const Tensor4 x = random_tensor(2, 3, 4, 4, rng);
  CHECK(none.forward(x, Mode::Train).data == x.data);
  CHECK(none.forward(x, Mode::Eval).data == x.data);
  CHECK(half.forward(x, Mode::Eval).data == x.data);
}

TEST_CASE("dropout rejects rate >= 1") {
  CHECK_THROWS_AS(Dropout<float>(1.f, Rng(0)), ContractError);
}

TEST_CASE("dropout keeps about 1-p of the units and rescales") {
  Dropout<float> drop(0.5f, Rng(3));
  const Tensor4 x(1, 1, 250, 400, 1.f);  // 1e5 elements
  const Tensor4 y = drop.forward(x, Mode::Train);
  int64_t kept = 0;
  double sum = 0.0;
  for (float v : y.data) {
    if (v != 0.f) {
      ++kept;
      CHECK(v == doctest::Approx(2.f));
    }
    sum += v;
  }
  const double frac = static_cast<double>(kept) / static_cast<double>(y.numel());
  CHECK(frac > 0.49);
  CHECK(frac < 0.51);
  // sample mean of the output stays within 2% of the input mean
  CHECK(std::abs(sum / static_cast<double>(y.numel()) - 1.0) < 0.02);
}

TEST_CASE("dropout backward reuses the forward mask") {
  Dropout<float> drop(0.5f, Rng(4));
  const Tensor4 x(1, 1, 10, 10, 1.f);
  const Tensor4 y = drop.forward(x, Mode::Train);
  const Tensor4 dx = drop.backward(Tensor4(1, 1, 10, 10, 1.f));
  for (size_t i = 0; i < y.data.size(); ++i)
    CHECK(dx.data[i] == y.data[i]);  // same positions, same 1/(1-p) scale
}

TEST_CASE("dropout train-mode expectation approaches the input") {
  const Tensor4 x(1, 2, 2, 2, 3.f);
  Dropout<float> drop(0.5f, Rng(6));
  std::vector<double> acc(static_cast<size_t>(x.numel()), 0.0);
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const Tensor4 y = drop.forward(x, Mode::Train);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += y.data[i];
  }
  for (double v : acc) CHECK(std::abs(v / trials - 3.0) / 3.0 < 0.05);
}

TEST_CASE("flatten reshapes 11x54x54 to 32076 and is bijective") {
  Flatten<float> flat;
  const Tensor4 y = flat.forward(Tensor4(1, 11, 54, 54), Mode::Train);
  CHECK(y.shape == std::array<int64_t, 4>{1, 32076, 1, 1});
  const Tensor4 back = flat.backward(y);
  CHECK(back.shape == std::array<int64_t, 4>{1, 11, 54, 54});
}

TEST_CASE("flatten is row-major") {
  Flatten<float> flat;
  Tensor4 x(2, 1, 2, 2);
  x.data = {1, 2, 3, 4, 5, 6, 7, 8};
  const Tensor4 y = flat.forward(x, Mode::Train);
  REQUIRE(y.shape == std::array<int64_t, 4>{2, 4, 1, 1});
  for (int j = 0; j < 4; ++j) {
    CHECK(y.at2(0, j) == static_cast<float>(j + 1));
    CHECK(y.at2(1, j) == static_cast<float>(j + 5));
  }
}

TEST_CASE("softmax cross-entropy on uniform logits is ln 2") {
  Tensor4 logits = Tensor4::matrix(1, 2);
  const LossResult<float> r = softmax_xent(logits, {1});
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("softmax cross-entropy saturates for confident correct logits") {
  Tensor4 logits = Tensor4::matrix(1, 2);
  logits.data = {10.f, -10.f};
  const LossResult<float> r = softmax_xent(logits, {0});
  CHECK(r.loss == doctest::Approx(2.06e-9).epsilon(0.05));
}

TEST_CASE("softmax cross-entropy rejects out-of-range labels") {
  const Tensor4 logits = Tensor4::matrix(2, 2);
  CHECK_THROWS_AS(softmax_xent(logits, {0, 2}), ContractError);
  CHECK_THROWS_AS(softmax_xent(logits, {-1, 0}), ContractError);
}

TEST_CASE("softmax loss is shift invariant") {
  Rng rng(12);
  Tensor4 logits = Tensor4::matrix(3, 2);
  for (auto& v : logits.data) v = static_cast<float>(rng.uniform(-2, 2));
  Tensor4 shifted = logits;
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 2; ++c) shifted.at2(r, c) += 5.f;
  const std::vector<int> labels = {0, 1, 0};
  CHECK(softmax_xent(logits, labels).loss ==
        doctest::Approx(softmax_xent(shifted, labels).loss).epsilon(1e-4));
}

TEST_CASE("backward without a cached forward raises") {
  ReLU<float> relu;
  CHECK_THROWS_AS(relu.backward(Tensor4(1, 1, 2, 2)), ContractError);
  Rng init(13);
  Conv2d<float> conv(1, 1, 3, init);
  (void)conv.forward(Tensor4(1, 1, 4, 4), Mode::Train);
  (void)conv.backward(Tensor4(1, 1, 2, 2));
  CHECK_THROWS_AS(conv.backward(Tensor4(1, 1, 2, 2)), ContractError);
}

TEST_CASE("finite-difference gradient checks pass for every layer") {
  const auto reports = run_gradcheck_suite(3);
  for (const auto& r : reports) {
    INFO(r.name, " max rel err ", r.max_rel_err, " tol ", r.tolerance);
    CHECK(r.pass);
  }
}
