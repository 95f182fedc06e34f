#include <doctest.h>

#include "shcanet/ad/gradcheck.hpp"
#include "shcanet/ad/ops.hpp"
#include "test_util.hpp"

using namespace shcanet;
using ad::Tape;
using ad::Var;
using Leaves = std::span<const Var<double>>;

namespace {

// Random projection keeps gradients away from the symmetric cancellations a
// plain sum would cause (e.g. train-mode batchnorm).
Var<double> project(Var<double> y, std::uint64_t seed) {
  return ad::dot_constant(y, testing::random_tensor(y.shape(), seed));
}

}  // namespace

TEST_CASE("backward of sum(x) is all ones") {
  Tape<double> t;
  auto x = t.leaf(testing::random_tensor(Shape::nchw(1, 2, 3, 3), 1));
  t.backward(ad::sum(x));
  const auto g = t.grad(x);
  for (double v : g.data()) CHECK(v == 1.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tape<double> t;
  const auto xv = testing::random_tensor(Shape{7}, 2);
  auto x = t.leaf(xv);
  t.backward(ad::sum(ad::mul(x, x)));
  const auto g = t.grad(x);
  for (std::size_t i = 0; i < 7; ++i) CHECK(g[i] == 2.0 * xv[i]);
}

TEST_CASE("untouched leaves get zero gradient; fan-out accumulates") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>(Shape{3}, 1.5));
  auto unused = t.leaf(Tensor<double>(Shape{3}, 4.0));
  auto y = ad::add(ad::scale(x, 2.0), ad::scale(x, 3.0));
  t.backward(ad::sum(y));
  const auto gx = t.grad(x), gu = t.grad(unused);
  for (double v : gx.data()) CHECK(v == 5.0);
  for (double v : gu.data()) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalars and second calls") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>(Shape{3}, 1.0));
  CHECK_THROWS_AS(t.backward(x), InvalidInput);
  auto s = ad::sum(x);
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), InvalidInput);
}

TEST_CASE("gradcheck: conv2d graph <= 1e-6") {
  const auto x = testing::random_tensor(Shape::nchw(2, 4, 6, 5), 1);
  const auto w = testing::random_tensor(Shape::nchw(6, 2, 3, 3), 2);
  const auto b = testing::random_tensor(Shape{6}, 3);
  auto r = ad::gradcheck(
      [](Tape<double>&, Leaves l) { return project(ad::conv2d<double>(l[0], l[1], l[2], {2, 1, 2}), 9); }, {x, w, b});
  CHECK(r.max_rel_error <= 1e-6);

  const auto wd = testing::random_tensor(Shape::nchw(4, 1, 5, 5), 4);
  auto rd = ad::gradcheck(
      [](Tape<double>&, Leaves l) { return project(ad::conv2d<double>(l[0], l[1], std::nullopt, {2, 2, 4}), 9); }, {x, wd});
  CHECK(rd.max_rel_error <= 1e-6);
}

TEST_CASE("gradcheck: batchnorm train-mode graph <= 1e-5") {
  const auto x = testing::random_tensor(Shape::nchw(2, 3, 3, 3), 5, -2.0, 2.0);
  const auto g = testing::random_tensor(Shape{3}, 6, 0.5, 1.5);
  const auto b = testing::random_tensor(Shape{3}, 7);
  Tensor<double> mean(Shape{3}), var(Shape{3}, 1.0);
  auto r = ad::gradcheck(
      [&](Tape<double>&, Leaves l) {
        return project(ad::batchnorm2d<double>(l[0], l[1], l[2], {&mean, &var}, ad::BnMode::train, 0.03, 1e-3), 11);
      },
      {x, g, b});
  CHECK(r.max_rel_error <= 1e-5);

  auto re = ad::gradcheck(
      [&](Tape<double>&, Leaves l) {
        return project(ad::batchnorm2d<double>(l[0], l[1], l[2], {&mean, &var}, ad::BnMode::eval, 0.03, 1e-3), 11);
      },
      {x, g, b});
  CHECK(re.max_rel_error <= 1e-6);
}

TEST_CASE("gradcheck: sigmoid chain <= 1e-7") {
  const auto x = testing::random_tensor(Shape{12}, 8, -3.0, 3.0);
  auto r = ad::gradcheck([](Tape<double>&, Leaves l) { return project(ad::sigmoid(ad::sigmoid(ad::sigmoid(l[0]))), 3); }, {x});
  CHECK(r.max_rel_error <= 1e-7);
}

TEST_CASE("gradcheck: every remaining op <= 1e-6") {
  const auto x = testing::random_tensor(Shape::nchw(2, 4, 4, 6), 21, -2.0, 2.0);
  const auto y = testing::random_tensor(Shape::nchw(2, 4, 4, 6), 22);
  // keep hard-swish inputs away from its kinks at +-3
  auto hs = testing::random_tensor(Shape::nchw(2, 4, 4, 6), 23, -5.0, 5.0);
  for (auto& v : hs.data())
    if (std::abs(std::abs(v) - 3.0) < 0.1) v += 0.25;
  struct Case {
    const char* name;
    ad::GraphFn fn;
    std::vector<Tensor<double>> in;
  };
  const std::vector<Case> cases{
      {"silu", [](Tape<double>&, Leaves l) { return project(ad::silu(l[0]), 1); }, {x}},
      {"hardswish", [](Tape<double>&, Leaves l) { return project(ad::hardswish(l[0]), 1); }, {hs}},
      {"add/mul", [](Tape<double>&, Leaves l) { return project(ad::mul(ad::add(l[0], l[1]), l[1]), 1); }, {x, y}},
      {"concat/split",
       [](Tape<double>&, Leaves l) {
         auto parts = ad::split(ad::concat<double>({l[0], l[1]}, 1), 1, {3, 5});
         return ad::add(project(parts[0], 2), project(parts[1], 3));
       },
       {x, y}},
      {"shuffle", [](Tape<double>&, Leaves l) { return project(ad::channel_shuffle(l[0], 2), 4); }, {x}},
      {"pool_h", [](Tape<double>&, Leaves l) { return project(ad::global_pool_h(l[0]), 5); }, {x}},
      {"pool_w", [](Tape<double>&, Leaves l) { return project(ad::global_pool_w(l[0]), 5); }, {x}},
      {"upsample", [](Tape<double>&, Leaves l) { return project(ad::upsample_nearest2x(l[0]), 6); }, {x}},
      {"maxpool", [](Tape<double>&, Leaves l) { return project(ad::maxpool2x2(l[0]), 6); }, {x}},
      {"reshape", [](Tape<double>&, Leaves l) { return project(ad::reshape(l[0], Shape::nchw(2, 4, 24, 1)), 7); }, {x}},
      {"coord_gate",
       [](Tape<double>&, Leaves l) { return project(ad::coord_gate(l[0], ad::global_pool_h(l[1]), ad::global_pool_w(l[1])), 8); },
       {x, y}},
      {"fusion fast",
       [](Tape<double>&, Leaves l) {
         return project(ad::weighted_fusion<double>({l[0], l[1]}, l[2], ad::FusionMode::fast_normalized, 1e-4), 9);
       },
       {x, y, Tensor<double>(Shape{2}, {0.7, 1.3})}},
      {"fusion sum",
       [](Tape<double>&, Leaves l) {
         return project(ad::weighted_fusion<double>({l[0], l[1]}, std::nullopt, ad::FusionMode::plain_sum, 1e-4), 9);
       },
       {x, y}},
  };
  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(ad::gradcheck(c.fn, c.in).max_rel_error <= 1e-6);
  }
}
