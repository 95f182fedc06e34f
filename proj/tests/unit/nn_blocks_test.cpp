#include <doctest.h>

#include <cmath>

#include "shcanet/ad/gradcheck.hpp"
#include "shcanet/nn/detector.hpp"
#include "shcanet/oracles.hpp"
#include "test_util.hpp"

using namespace shcanet;
using ad::Tape;
using ad::Var;

namespace {

template <typename T>
void zero_conv(nn::ParamStore<T>& store, const nn::Conv& c) {
  store.params()[c.weight].value.fill(T{0});
  if (c.bias) store.params()[*c.bias].value.fill(T{0});
}

// Closed-form parameter counts per layer type.
std::size_t cbs_count(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + 2 * out; }
std::size_t dw_count(std::size_t c, std::size_t k) { return c * k * k + 2 * c; }
std::size_t unit1_count(std::size_t c, std::size_t k) { return 2 * cbs_count(c / 2, c / 2, 1) + dw_count(c / 2, k); }
std::size_t unit2_count(std::size_t in, std::size_t out, std::size_t k) {
  const std::size_t h = out / 2;
  return dw_count(in, k) + cbs_count(in, h, 1) + cbs_count(in, h, 1) + dw_count(h, k) + cbs_count(h, h, 1);
}
std::size_t ca_count(std::size_t c) {
  const std::size_t m = std::max<std::size_t>(8, c / 32);
  return c * m + m + 2 * (m * c + c);
}

}  // namespace

TEST_CASE("cbs shapes and zero weights") {
  nn::ParamStore<double> store(1);
  auto cbs = nn::make_cbs(store, "cbs", 3, 16, 3, 2);
  Tape<double> tape;
  nn::Context<double> ctx(tape, store, ad::BnMode::train);
  auto y = nn::forward(ctx, cbs, tape.constant(testing::random_tensor(Shape::nchw(1, 3, 8, 8), 3)));
  CHECK(y.shape() == Shape::nchw(1, 16, 4, 4));

  zero_conv(store, cbs.conv);
  Tape<double> tape2;
  nn::Context<double> ctx2(tape2, store, ad::BnMode::train);
  auto z = nn::forward(ctx2, cbs, tape2.constant(testing::random_tensor(Shape::nchw(2, 3, 8, 8), 4)));
  for (double v : z.value().data()) CHECK(v == 0.0);
}

TEST_CASE("cbs rejects unsupported kernel and stride") {
  nn::ParamStore<double> store(1);
  CHECK_THROWS_AS(nn::make_cbs(store, "a", 3, 8, 7, 1), InvalidInput);
  CHECK_THROWS_AS(nn::make_cbs(store, "b", 3, 8, 3, 3), InvalidInput);
}

TEST_CASE("cbs equals the composed primitive ops exactly") {
  nn::ParamStore<double> store(9);
  auto cbs = nn::make_cbs(store, "cbs", 4, 6, 3, 1);
  store.params()[cbs.bn.gamma].value = testing::random_tensor(Shape{6}, 10, 0.5, 1.5);
  store.params()[cbs.bn.beta].value = testing::random_tensor(Shape{6}, 11);
  const auto x = testing::random_tensor(Shape::nchw(2, 4, 6, 6), 12);

  auto copy = store;
  Tape<double> tape;
  nn::Context<double> ctx(tape, store, ad::BnMode::train);
  const Tensor<double> y = nn::forward(ctx, cbs, tape.constant(x)).value();

  Tape<double> t2;
  const auto& p = copy.params();
  auto conv = ad::conv2d(t2.constant(x), t2.constant(p[cbs.conv.weight].value), std::optional<Var<double>>{}, ad::Conv2dOptions{1, 1, 1});
  auto bn = ad::batchnorm2d(conv, t2.constant(p[cbs.bn.gamma].value), t2.constant(p[cbs.bn.beta].value),
                            ad::BnRunningStats<double>{&copy.buffers()[0].value, &copy.buffers()[1].value},
                            ad::BnMode::train, 0.03, 1e-3);
  CHECK(y == ad::silu(bn).value());
  CHECK(store.buffers()[0].value == copy.buffers()[0].value);
}

TEST_CASE("shuffle unit shapes") {
  nn::ParamStore<float> store(2);
  auto s1 = nn::make_shuffle_unit(store, "s1", nn::ShuffleUnitConfig{32, 1, 5, 0});
  auto s2 = nn::make_shuffle_unit(store, "s2", nn::ShuffleUnitConfig{32, 2, 5, 0});
  Tape<float> tape(false);
  nn::Context<float> ctx(tape, store, ad::BnMode::eval);
  auto x = tape.constant(testing::random_tensor<float>(Shape::nchw(1, 32, 16, 16), 1));
  CHECK(nn::forward(ctx, s1, x).shape() == Shape::nchw(1, 32, 16, 16));
  CHECK(nn::forward(ctx, s2, x).shape() == Shape::nchw(1, 64, 8, 8));
  CHECK_THROWS_AS(nn::make_shuffle_unit(store, "odd", nn::ShuffleUnitConfig{31, 1, 5, 0}), InvalidInput);
}

TEST_CASE("stride-1 unit with a dead right branch interleaves the left half with zeros") {
  nn::ParamStore<double> store(3);
  auto u = nn::make_shuffle_unit(store, "u", nn::ShuffleUnitConfig{8, 1, 5, 0});
  zero_conv(store, u.pw2.conv);
  const auto x = testing::random_tensor(Shape::nchw(2, 8, 5, 5), 4);
  Tape<double> tape(false);
  nn::Context<double> ctx(tape, store, ad::BnMode::eval);
  const Tensor<double> y = nn::forward(ctx, u, tape.constant(x)).value();
  // concat = [left(0..3), zeros(4..7)], shuffle with 2 groups: output 2i <- i, 2i+1 <- 4+i
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 4; ++i)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          CHECK(y.at(n, 2 * i, h, w) == x.at(n, i, h, w));
          CHECK(y.at(n, 2 * i + 1, h, w) == 0.0);
        }
}

TEST_CASE("coordatt with zero parameters scales by a quarter") {
  nn::ParamStore<double> store(5);
  auto ca = nn::make_coordatt(store, "ca", nn::CoordAttConfig{16, 32, 8});
  for (auto* c : {&ca.reduce, &ca.gate_h, &ca.gate_w}) zero_conv(store, *c);
  const auto x = testing::random_tensor(Shape::nchw(2, 16, 4, 6), 6);
  Tape<double> tape(false);
  nn::Context<double> ctx(tape, store, ad::BnMode::eval);
  const Tensor<double> y = nn::forward(ctx, ca, tape.constant(x)).value();
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(0.25 * x[i]).epsilon(1e-15));
}

TEST_CASE("coordatt matches the per-element transcription") {
  for (auto act : {nn::Activation::hardswish, nn::Activation::relu, nn::Activation::silu}) {
    nn::ParamStore<double> store(7);
    auto ca = nn::make_coordatt(store, "ca", nn::CoordAttConfig{8, 32, 8, act});
    for (auto& p : store.params()) p.value = testing::random_tensor(p.value.shape(), nn::name_seed(1, p.name), -2, 2);
    const auto x = testing::random_tensor(Shape::nchw(1, 8, 4, 4), 8, -3, 3);
    Tape<double> tape(false);
    nn::Context<double> ctx(tape, store, ad::BnMode::eval);
    const Tensor<double> y = nn::forward(ctx, ca, tape.constant(x)).value();
    const auto& p = store.params();
    const Tensor<double> ref = oracle::coordatt(x, p[ca.reduce.weight].value, p[*ca.reduce.bias].value, p[ca.gate_h.weight].value,
                                                p[*ca.gate_h.bias].value, p[ca.gate_w.weight].value, p[*ca.gate_w.bias].value,
                                                static_cast<int>(act));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("coordatt gates lie in (0,1) and factor by row and column") {
  nn::ParamStore<double> store(11);
  auto ca = nn::make_coordatt(store, "ca", nn::CoordAttConfig{24, 32, 8});
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = testing::random_tensor(Shape::nchw(2, 24, 5, 7), 100 + trial, -4, 4);
    Tape<double> tape(false);
    nn::Context<double> ctx(tape, store, ad::BnMode::eval);
    auto xv = tape.constant(x);
    auto [gh, gw] = nn::coordatt_gates(ctx, ca, xv);
    CHECK(gh.shape() == Shape::nchw(2, 24, 5, 1));
    CHECK(gw.shape() == Shape::nchw(2, 24, 1, 7));
    for (double g : gh.value().data()) CHECK((g > 0 && g < 1));
    for (double g : gw.value().data()) CHECK((g > 0 && g < 1));
    const Tensor<double> y = nn::forward(ctx, ca, xv).value();
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
    // gain(i,j) * gain(i',j') == gain(i,j') * gain(i',j) for a rank-one gate map
    for (int c = 0; c < 24; c += 5) {
      auto gain = [&](int i, int j) { return y.at(1, c, i, j) / x.at(1, c, i, j); };
      CHECK(gain(0, 0) * gain(3, 5) == doctest::Approx(gain(0, 5) * gain(3, 0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("row gates ignore column order") {
  nn::ParamStore<double> store(12);
  auto ca = nn::make_coordatt(store, "ca", nn::CoordAttConfig{8, 32, 8});
  const auto x = testing::random_tensor(Shape::nchw(1, 8, 4, 5), 13);
  Tensor<double> xp(x.shape());
  const int perm[5] = {3, 0, 4, 1, 2};
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) xp.at(0, c, i, j) = x.at(0, c, i, perm[j]);
  Tape<double> tape(false);
  nn::Context<double> ctx(tape, store, ad::BnMode::eval);
  auto a = nn::coordatt_gates(ctx, ca, tape.constant(x));
  auto b = nn::coordatt_gates(ctx, ca, tape.constant(xp));
  for (std::size_t i = 0; i < a.first.value().size(); ++i)
    CHECK(a.first.value()[i] == doctest::Approx(b.first.value()[i]).epsilon(1e-14));
  for (int c = 0; c < 8; ++c)
    for (int j = 0; j < 5; ++j) CHECK(b.second.value().at(0, c, 0, j) == a.second.value().at(0, c, 0, perm[j]));
}

TEST_CASE("backbone output strides and input size check") {
  nn::ParamStore<float> store(1);
  auto bb = nn::make_backbone(store, "bb", nn::BackboneConfig::desk());
  Tape<float> tape(false);
  nn::Context<float> ctx(tape, store, ad::BnMode::eval);
  auto out = nn::forward(ctx, bb, tape.constant(testing::random_tensor<float>(Shape::nchw(2, 3, 64, 64), 1)));
  CHECK(out[0].shape() == Shape::nchw(2, 64, 8, 8));
  CHECK(out[1].shape() == Shape::nchw(2, 128, 4, 4));
  CHECK(out[2].shape() == Shape::nchw(2, 256, 2, 2));
  CHECK_THROWS_AS(nn::forward(ctx, bb, tape.constant(Tensor<float>(Shape::nchw(1, 3, 48, 64)))), InvalidInput);
}

TEST_CASE("attention off equals attention replaced by identity, bit for bit") {
  auto on_cfg = nn::BackboneConfig::desk();
  auto off_cfg = on_cfg;
  off_cfg.attention = false;
  nn::ParamStore<float> on_store(21), off_store(21);
  auto on = nn::make_backbone(on_store, "bb", on_cfg);
  auto off = nn::make_backbone(off_store, "bb", off_cfg);
  // Gates of exactly 1: zero weights and a bias that saturates the sigmoid.
  for (const auto& st : on.stages) {
    on_store.params()[st.attention->gate_h.weight].value.fill(0.f);
    on_store.params()[st.attention->gate_w.weight].value.fill(0.f);
    on_store.params()[*st.attention->gate_h.bias].value.fill(40.f);
    on_store.params()[*st.attention->gate_w.bias].value.fill(40.f);
  }
  const auto x = testing::random_tensor<float>(Shape::nchw(2, 3, 64, 64), 22);
  for (auto mode : {ad::BnMode::train, ad::BnMode::eval}) {
    Tape<float> ta(false), tb(false);
    nn::Context<float> ca(ta, on_store, mode), cb(tb, off_store, mode);
    auto a = nn::forward(ca, on, ta.constant(x));
    auto b = nn::forward(cb, off, tb.constant(x));
    for (int l = 0; l < 3; ++l) CHECK(a[l].value() == b[l].value());
  }
  CHECK(on_store.count_parameters() - off_store.count_parameters() == ca_count(64) + ca_count(128) + ca_count(256));
}

TEST_CASE("parameter counts follow the per-layer formulas") {
  {
    nn::ParamStore<float> s;
    nn::make_conv(s, "c", 4, 8, 1, 1, 1, true);
    CHECK(s.count_parameters() == 40);
  }
  {
    nn::ParamStore<float> s;
    nn::make_cbs(s, "c", 3, 16, 3, 2);
    CHECK(s.count_parameters() == 464);
  }
  for (bool attention : {true, false}) {
    auto cfg = nn::BackboneConfig::desk();
    cfg.attention = attention;
    nn::ParamStore<float> s;
    nn::make_backbone(s, "bb", cfg);
    std::size_t expect = cbs_count(3, 16, 3) + cbs_count(16, 32, 3);
    std::size_t in = 32;
    for (const auto& st : cfg.stages) {
      const auto c = static_cast<std::size_t>(st.channels);
      expect += unit2_count(in, c, 5) + static_cast<std::size_t>(st.repeats - 1) * unit1_count(c, 5);
      if (attention) expect += ca_count(c);
      in = c;
    }
    CHECK(s.count_parameters() == expect);
  }
  // Hand-summed audit of the full desk detector (2 classes, 64 neck channels).
  nn::ModelConfig mc;
  mc.input_size = 64;
  CHECK(nn::Detector<float>(mc, 0).count_parameters() == 410000);
  nn::ParamStore<float> s;
  nn::make_backbone(s, "bb", nn::BackboneConfig::desk());
  CHECK(s.count_parameters() == 154888);
}

TEST_CASE("initialization depends only on seed and parameter name") {
  nn::ParamStore<float> a(5), b(5), c(6);
  nn::make_conv(a, "x", 4, 4, 3, 1, 1, false);
  nn::make_conv(b, "pad", 2, 2, 1, 1, 1, false);
  nn::make_conv(b, "x", 4, 4, 3, 1, 1, false);
  nn::make_conv(c, "x", 4, 4, 3, 1, 1, false);
  CHECK(a.params()[0].value == b.params()[1].value);
  CHECK_FALSE(a.params()[0].value == c.params()[0].value);
  const double bound = 1.0 / std::sqrt(36.0);
  for (float v : a.params()[0].value.data()) CHECK(std::abs(v) <= bound);
  CHECK_THROWS_AS(nn::make_conv(a, "x", 4, 4, 3, 1, 1, false), InvalidInput);
}

TEST_CASE("one-stage backbone passes a double-precision gradient check") {
  // stem -> stage (stride-2 unit, stride-1 unit, attention) -> projected sum
  nn::ParamStore<double> store(31);
  nn::BackboneConfig cfg;
  cfg.stem = {nn::CbsConfig{3, 4, 3, 2}, nn::CbsConfig{4, 8, 3, 2}};
  cfg.dw_kernel = 3;
  nn::Backbone bb = nn::make_backbone(store, "bb", cfg);
  const nn::Stage stage = nn::make_stage(store, "one", 8, nn::StageConfig{16, 2}, 3, true, 32, nn::Activation::hardswish);
  const auto image = testing::random_tensor(Shape::nchw(2, 3, 16, 16), 32);
  const auto coeffs = testing::random_tensor(Shape::nchw(2, 16, 2, 2), 33);

  std::vector<std::size_t> used;
  std::vector<Tensor<double>> inputs{image};
  for (std::size_t i = 0; i < store.params().size(); ++i) {
    const auto& name = store.params()[i].name;
    if (name.rfind("bb.stem", 0) == 0 || name.rfind("one.", 0) == 0) {
      used.push_back(i);
      inputs.push_back(store.params()[i].value);
    }
  }
  auto graph = [&](Tape<double>& tape, std::span<const Var<double>> leaves) {
    nn::Context<double> ctx(tape, store, ad::BnMode::train);
    for (std::size_t k = 0; k < used.size(); ++k) ctx.bind(used[k], leaves[k + 1]);
    auto x = nn::forward(ctx, bb.stem[1], nn::forward(ctx, bb.stem[0], leaves[0]));
    return ad::dot_constant(nn::forward(ctx, stage, x), coeffs);
  };
  // Betas of a batchnorm that feeds another batchnorm have a true gradient of
  // exactly zero; the floor keeps their rounding noise from reading as error.
  const auto r = ad::gradcheck(graph, inputs, {1e-4, 0, 34, 1e-6});
  INFO("worst input ", r.worst_input, " index ", r.worst_index);
  CHECK(r.max_rel_error <= 1e-4);
  CHECK(r.probes > 100);
}
