#include <doctest.h>

#include <cmath>

#include "shcanet/ad/ops.hpp"
#include "shcanet/oracles.hpp"
#include "test_util.hpp"

using namespace shcanet;
using ad::Tape;

TEST_CASE("conv2d: ones kernel over ones sums to 9") {
  Tape<float> t;
  auto y = ad::conv2d<float>(t.leaf(Tensor<float>(Shape::nchw(1, 1, 3, 3), 1.f)),
                             t.leaf(Tensor<float>(Shape::nchw(1, 1, 3, 3), 1.f)), std::nullopt, {});
  REQUIRE(y.shape() == Shape::nchw(1, 1, 1, 1));
  CHECK(y.value()[0] == 9.0f);
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  Tape<float> t;
  const auto x = testing::random_tensor<float>(Shape::nchw(2, 1, 5, 7), 3);
  auto y = ad::conv2d<float>(t.leaf(x), t.leaf(Tensor<float>(Shape::nchw(1, 1, 1, 1), 1.f)), std::nullopt, {});
  CHECK(y.value() == x);
}

TEST_CASE("conv2d: depthwise k5 s2 matches the nested-loop oracle") {
  const auto x = testing::random_tensor(Shape::nchw(1, 2, 4, 4), 42);
  const auto w = testing::random_tensor(Shape::nchw(2, 1, 5, 5), 43);
  Tape<double> t;
  auto y = ad::conv2d<double>(t.leaf(x), t.leaf(w), std::nullopt, {2, 2, 2});
  REQUIRE(y.shape() == Shape::nchw(1, 2, 2, 2));
  CHECK(y.value() == oracle::conv2d(x, w, std::nullopt, 2, 2, 2));
}

TEST_CASE("conv2d: depthwise equals per-channel correlation bit-exactly for many shapes") {
  for (int seed = 0; seed < 20; ++seed) {
    const int c = 1 + seed % 5, hw = 3 + seed % 9, k = seed % 2 ? 5 : 3, stride = 1 + seed % 2;
    const auto x = testing::random_tensor(Shape::nchw(2, c, hw, hw + 1), 100 + seed);
    const auto w = testing::random_tensor(Shape::nchw(c, 1, k, k), 200 + seed);
    const auto b = testing::random_tensor(Shape{c}, 300 + seed);
    Tape<double> t;
    auto y = ad::conv2d<double>(t.leaf(x), t.leaf(w), t.leaf(b), {stride, k / 2, c});
    CHECK(y.value() == oracle::conv2d(x, w, b, stride, k / 2, c));
  }
}

TEST_CASE("conv2d: general grouped conv matches the oracle") {
  const auto x = testing::random_tensor(Shape::nchw(2, 6, 9, 8), 7);
  const auto w = testing::random_tensor(Shape::nchw(4, 3, 3, 3), 8);
  const auto b = testing::random_tensor(Shape{4}, 9);
  Tape<double> t;
  auto y = ad::conv2d<double>(t.leaf(x), t.leaf(w), t.leaf(b), {2, 1, 2});
  CHECK(y.shape() == Shape::nchw(2, 4, 5, 4));
  CHECK(y.value() == oracle::conv2d(x, w, b, 2, 1, 2));
}

TEST_CASE("conv2d: shape mismatches name the axis") {
  Tape<float> t;
  auto x = t.leaf(Tensor<float>(Shape::nchw(1, 3, 4, 4)));
  auto w = t.leaf(Tensor<float>(Shape::nchw(2, 2, 3, 3)));
  CHECK_THROWS_WITH_AS(ad::conv2d<float>(x, w, std::nullopt, {1, 1, 1}), doctest::Contains("axis 1"), InvalidInput);
  auto w2 = t.leaf(Tensor<float>(Shape::nchw(2, 1, 3, 3)));
  CHECK_THROWS_WITH_AS(ad::conv2d<float>(x, w2, std::nullopt, {1, 1, 2}), doctest::Contains("axis (1)"), InvalidInput);
}

TEST_CASE("batchnorm2d: eval mode with identity statistics is the identity") {
  Tape<float> t;
  const auto x = testing::random_tensor<float>(Shape::nchw(2, 3, 4, 4), 5);
  Tensor<float> mean(Shape{3}, 0.f), var(Shape{3}, 1.f);
  auto y = ad::batchnorm2d<float>(t.leaf(x), t.leaf(Tensor<float>(Shape{3}, 1.f)), t.leaf(Tensor<float>(Shape{3}, 0.f)),
                                  {&mean, &var}, ad::BnMode::eval, 0.03f, 1e-12f);
  CHECK(y.value() == x);
}

TEST_CASE("batchnorm2d: constant channel in train mode outputs beta") {
  Tape<double> t;
  Tensor<double> x(Shape::nchw(2, 1, 3, 3), 4.25);
  Tensor<double> mean(Shape{1}, 0.0), var(Shape{1}, 1.0);
  auto y = ad::batchnorm2d<double>(t.leaf(x), t.leaf(Tensor<double>(Shape{1}, 2.0)), t.leaf(Tensor<double>(Shape{1}, 0.7)),
                                   {&mean, &var}, ad::BnMode::train, 0.03, 1e-3);
  for (double v : y.value().data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(mean[0] == doctest::Approx(0.03 * 4.25));
  CHECK(var[0] == doctest::Approx(0.97));
}

TEST_CASE("batchnorm2d: train-mode output moments are (beta, |gamma|)") {
  Tape<double> t;
  const auto x = testing::random_tensor(Shape::nchw(2, 3, 4, 4), 77, -3.0, 5.0);
  Tensor<double> gamma(Shape{3}, {1.5, -0.5, 2.0}), beta(Shape{3}, {0.1, -0.2, 0.3});
  Tensor<double> mean(Shape{3}, 0.0), var(Shape{3}, 1.0);
  auto y = ad::batchnorm2d<double>(t.leaf(x), t.leaf(gamma), t.leaf(beta), {&mean, &var}, ad::BnMode::train, 0.03, 1e-12);
  for (int c = 0; c < 3; ++c) {
    double m = 0, s = 0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) m += y.value().plane(n, c)[i];
    m /= 32;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) s += (y.value().plane(n, c)[i] - m) * (y.value().plane(n, c)[i] - m);
    s = std::sqrt(s / 32);
    CHECK(std::abs(m - beta[static_cast<std::size_t>(c)]) < 1e-5);
    CHECK(std::abs(s - std::abs(gamma[static_cast<std::size_t>(c)])) < 1e-5);
  }
}

TEST_CASE("batchnorm2d: non-positive eps and bad parameter lengths are rejected") {
  Tape<float> t;
  Tensor<float> mean(Shape{2}), var(Shape{2}, 1.f);
  auto x = t.leaf(Tensor<float>(Shape::nchw(1, 2, 2, 2)));
  auto g = t.leaf(Tensor<float>(Shape{2}, 1.f));
  CHECK_THROWS_AS(ad::batchnorm2d<float>(x, g, g, {&mean, &var}, ad::BnMode::eval, 0.03f, 0.f), InvalidInput);
  auto g3 = t.leaf(Tensor<float>(Shape{3}, 1.f));
  CHECK_THROWS_AS(ad::batchnorm2d<float>(x, g3, g3, {&mean, &var}, ad::BnMode::eval, 0.03f, 1e-3f), InvalidInput);
}

TEST_CASE("activations: origin, clamp corners and sigmoid(1)") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>(Shape{5}, {0.0, 3.0, -3.0, 1.0, -40.0}));
  auto s = ad::sigmoid(x).value();
  auto si = ad::silu(x).value();
  auto hs = ad::hardswish(x).value();
  CHECK(s[0] == 0.5);
  CHECK(si[0] == 0.0);
  CHECK(hs[0] == 0.0);
  CHECK(hs[1] == 3.0);
  CHECK(hs[2] == 0.0);
  CHECK(s[3] == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(std::isfinite(s[4]));
  CHECK(s[4] > 0.0);
}

TEST_CASE("concat and split") {
  Tape<double> t;
  const auto a = testing::random_tensor(Shape::nchw(1, 2, 2, 2), 1);
  const auto b = testing::random_tensor(Shape::nchw(1, 3, 2, 2), 2);
  auto c = ad::concat<double>({t.leaf(a), t.leaf(b)}, 1);
  CHECK(c.shape() == Shape::nchw(1, 5, 2, 2));
  auto parts = ad::split(c, 1, {2, 3});
  CHECK(parts[0].value() == a);
  CHECK(parts[1].value() == b);

  auto six = t.leaf(testing::random_tensor(Shape::nchw(1, 6, 1, 1), 4));
  auto halves = ad::split(six, 1, {3, 3});
  for (int i = 0; i < 3; ++i) {
    CHECK(halves[0].value()[static_cast<std::size_t>(i)] == six.value()[static_cast<std::size_t>(i)]);
    CHECK(halves[1].value()[static_cast<std::size_t>(i)] == six.value()[static_cast<std::size_t>(i + 3)]);
  }
  CHECK_THROWS_AS(ad::concat<double>({t.leaf(a), t.leaf(testing::random_tensor(Shape::nchw(1, 3, 2, 3), 2))}, 1), InvalidInput);
  CHECK_THROWS_AS(ad::split(c, 1, {2, 2}), InvalidInput);
}

TEST_CASE("concat/split round trip is bit-exact on random tensors and axes") {
  for (int seed = 0; seed < 50; ++seed) {
    const int axis = seed % 4;
    Shape base = Shape::nchw(1 + seed % 2, 2 + seed % 3, 1 + seed % 4, 3);
    const int e1 = 1 + seed % 3, e2 = 2 + seed % 2;
    const auto a = testing::random_tensor(base.with(axis, e1), seed);
    const auto b = testing::random_tensor(base.with(axis, e2), seed + 1000);
    Tape<double> t;
    auto parts = ad::split(ad::concat<double>({t.leaf(a), t.leaf(b)}, axis), axis, {e1, e2});
    CHECK(parts[0].value() == a);
    CHECK(parts[1].value() == b);
    auto joined = ad::concat<double>(parts, axis);
    CHECK(joined.value() == ad::concat<double>({t.leaf(a), t.leaf(b)}, axis).value());
  }
}

TEST_CASE("channel_shuffle: C=6, g=2 reorders to 0,3,1,4,2,5") {
  Tape<double> t;
  Tensor<double> x(Shape::nchw(1, 6, 1, 1), {0, 1, 2, 3, 4, 5});
  auto y = ad::channel_shuffle(t.leaf(x), 2).value();
  CHECK(y == Tensor<double>(Shape::nchw(1, 6, 1, 1), {0, 3, 1, 4, 2, 5}));
  CHECK(ad::channel_shuffle(t.leaf(x), 1).value() == x);
  CHECK(ad::channel_shuffle(t.leaf(x), 6).value() == x);
  CHECK_THROWS_AS(ad::channel_shuffle(t.leaf(x), 4), InvalidInput);
}

TEST_CASE("channel_shuffle: shuffle(g) then shuffle(C/g) is the identity and a permutation") {
  for (int seed = 0; seed < 20; ++seed) {
    const int g = 1 + seed % 4, per = 1 + seed % 5;
    const auto x = testing::random_tensor(Shape::nchw(2, g * per, 3, 2), seed);
    Tape<double> t;
    auto y = ad::channel_shuffle(t.leaf(x), g);
    CHECK(ad::channel_shuffle(y, per).value() == x);
    // every output channel slice equals exactly one input slice
    for (int c = 0; c < g * per; ++c) {
      int hits = 0;
      for (int d = 0; d < g * per; ++d)
        hits += std::equal(y.value().plane(0, c), y.value().plane(0, c) + 6, x.plane(0, d)) ? 1 : 0;
      CHECK(hits == 1);
    }
  }
}

TEST_CASE("global pooling") {
  Tape<double> t;
  auto ones = t.leaf(Tensor<double>(Shape::nchw(1, 2, 3, 4), 1.0));
  for (double v : ad::global_pool_h(ones).value().data()) CHECK(v == 1.0);
  for (double v : ad::global_pool_w(ones).value().data()) CHECK(v == 1.0);

  auto x = t.leaf(Tensor<double>(Shape::nchw(1, 1, 2, 2), {1, 2, 3, 4}));
  CHECK(ad::global_pool_h(x).value() == Tensor<double>(Shape::nchw(1, 1, 2, 1), {1.5, 3.5}));
  CHECK(ad::global_pool_w(x).value() == Tensor<double>(Shape::nchw(1, 1, 1, 2), {2.0, 3.0}));

  const auto col = testing::random_tensor(Shape::nchw(1, 3, 5, 1), 9);
  CHECK(ad::global_pool_h(t.leaf(col)).value() == col);
}

TEST_CASE("upsample_nearest2x") {
  Tape<double> t;
  auto y = ad::upsample_nearest2x(t.leaf(Tensor<double>(Shape::nchw(1, 1, 1, 1), 7.0)));
  CHECK(y.value() == Tensor<double>(Shape::nchw(1, 1, 2, 2), 7.0));

  auto checker = ad::upsample_nearest2x(t.leaf(Tensor<double>(Shape::nchw(1, 1, 2, 2), {1, 0, 0, 1})));
  CHECK(checker.value() == Tensor<double>(Shape::nchw(1, 1, 4, 4), {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1}));

  for (int seed = 0; seed < 10; ++seed) {
    const auto x = testing::random_tensor(Shape::nchw(2, 3, 1 + seed % 4, 2 + seed % 3), seed, 0.0, 5.0);
    CHECK(ad::maxpool2x2(ad::upsample_nearest2x(t.leaf(x))).value() == x);
  }
}

TEST_CASE("forward ops are deterministic") {
  const auto x = testing::random_tensor<float>(Shape::nchw(2, 4, 6, 6), 1);
  const auto w = testing::random_tensor<float>(Shape::nchw(4, 2, 3, 3), 2);
  auto run = [&] {
    Tape<float> t;
    auto y = ad::conv2d<float>(t.leaf(x), t.leaf(w), std::nullopt, {1, 1, 2});
    return ad::channel_shuffle(ad::silu(y), 2).value();
  };
  CHECK(run() == run());
}
