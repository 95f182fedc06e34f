#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "shcanet/data/synthetic.hpp"
#include "shcanet/train/optim.hpp"
#include "shcanet/train/trainer.hpp"
#include "test_util.hpp"

using namespace shcanet;
using train::OptimConfig;

namespace {

nn::ModelConfig small_model() {
  nn::ModelConfig cfg;
  cfg.input_size = 64;
  return cfg;
}

train::TrainOptions short_run(bool mosaic, std::size_t steps) {
  train::TrainOptions o;
  o.mosaic = mosaic;
  o.optim.batch_size = 4;
  o.optim.epochs = 20;
  o.max_steps = steps;
  o.eval_every = 0;
  return o;
}

bool same_params(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (!(a.params()[i].value == b.params()[i].value)) return false;
  return true;
}

}  // namespace

TEST_CASE("cosine_lr endpoints and midpoint") {
  const OptimConfig cfg;
  CHECK(train::cosine_lr(0, cfg) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(train::cosine_lr(cfg.epochs, cfg) == 1e-5);
  CHECK(std::abs(train::cosine_lr(cfg.epochs / 2.0, cfg) - 5.005e-3) < 1e-15);
  CHECK_THROWS_AS(train::cosine_lr(-1, cfg), InvalidInput);
  CHECK_THROWS_AS(train::cosine_lr(cfg.epochs + 1, cfg), InvalidInput);
}

TEST_CASE("optimizer config validation") {
  OptimConfig cfg;
  cfg.lrf = 0.1;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.warmup_epochs = cfg.epochs;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.lrf = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("warmup schedule endpoints and linear interior") {
  const OptimConfig cfg;
  const std::size_t spe = 10;
  const std::size_t w = train::warmup_steps(spe, cfg);
  REQUIRE(w == 30);
  const auto first = train::warmup_schedule(0, spe, cfg);
  CHECK(first.lr == 0.0);
  CHECK(first.momentum == 0.8);
  const auto last = train::warmup_schedule(w - 1, spe, cfg);
  CHECK(std::abs(last.lr - train::cosine_lr(cfg.warmup_epochs, cfg)) < 1e-12);
  CHECK(std::abs(last.momentum - cfg.momentum) < 1e-12);
  for (std::size_t s = 0; s < w; ++s) {
    const double f = static_cast<double>(s) / static_cast<double>(w - 1);
    const auto sc = train::warmup_schedule(s, spe, cfg);
    CHECK(std::abs(sc.lr - f * train::cosine_lr(cfg.warmup_epochs, cfg)) < 1e-15);
    CHECK(std::abs(sc.momentum - (0.8 + f * (cfg.momentum - 0.8))) < 1e-15);
  }
  CHECK_THROWS_AS(train::warmup_schedule(w, spe, cfg), InvalidInput);
}

TEST_CASE("schedule is continuous at the warmup boundary and non-increasing after it") {
  const OptimConfig cfg;
  for (std::size_t spe : {1u, 3u, 7u, 10u}) {
    const std::size_t w = train::warmup_steps(spe, cfg);
    const auto before = train::schedule_at(w - 1, spe, cfg);
    const auto after = train::schedule_at(w, spe, cfg);
    CHECK(std::abs(before.lr - after.lr) < 1e-12);
    CHECK(before.momentum == doctest::Approx(after.momentum).epsilon(1e-12));
    double prev = after.lr;
    for (std::size_t s = w; s < spe * cfg.epochs; ++s) {
      const double lr = train::schedule_at(s, spe, cfg).lr;
      CHECK(lr <= prev);
      prev = lr;
    }
    CHECK(prev >= cfg.lrf);
  }
}

TEST_CASE("sgd_update examples") {
  SUBCASE("zero grads and zero decay leave the parameter unchanged") {
    Tensor<double> p = testing::random_tensor(Shape{5}, 1);
    const Tensor<double> p0 = p;
    Tensor<double> v(Shape{5});
    train::sgd_update(p, v, Tensor<double>(Shape{5}), 0.1, 0.9, 0.0, true);
    CHECK(p == p0);
  }
  SUBCASE("scalar textbook step with decay") {
    Tensor<double> p(Shape{1}, 2.0), v(Shape{1}), g(Shape{1}, 0.5);
    train::sgd_update(p, v, g, 0.1, 0.0, 0.01, true);
    CHECK(p[0] == doctest::Approx(2.0 - 0.1 * (0.5 + 0.01 * 2.0)).epsilon(1e-15));
  }
  SUBCASE("two steps with momentum 0.9 follow the unrolled recurrence") {
    Tensor<double> p(Shape{1}, 1.0), v(Shape{1});
    const double lr = 0.1, m = 0.9, wd = 0.01, g1 = 0.3, g2 = -0.2;
    train::sgd_update(p, v, Tensor<double>(Shape{1}, g1), lr, m, wd, true);
    train::sgd_update(p, v, Tensor<double>(Shape{1}, g2), lr, m, wd, true);
    const double v1 = g1 + wd * 1.0;
    const double p1 = 1.0 - lr * v1;
    const double v2 = m * v1 + (g2 + wd * p1);
    const double p2 = p1 - lr * v2;
    CHECK(std::abs(p[0] - p2) < 1e-15);
    CHECK(std::abs(v[0] - v2) < 1e-15);
  }
  SUBCASE("momentum 0 and decay 0 is plain gradient descent, bit for bit") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Tensor<double> p = testing::random_tensor(Shape{37}, seed);
      const Tensor<double> g = testing::random_tensor(Shape{37}, seed + 100);
      Tensor<double> expect = p;
      for (std::size_t i = 0; i < expect.size(); ++i) expect[i] -= 0.05 * g[i];
      Tensor<double> v(Shape{37});
      train::sgd_update(p, v, g, 0.05, 0.0, 0.0, true);
      CHECK(p == expect);
    }
  }
  SUBCASE("shape mismatch") {
    Tensor<double> p(Shape{3}), v(Shape{3});
    CHECK_THROWS_AS(train::sgd_update(p, v, Tensor<double>(Shape{4}), 0.1, 0.9, 0.0, true), InvalidInput);
  }
}

TEST_CASE("sgd_step decays only convolution weights") {
  nn::ParamStore<double> store(3);
  store.add("w", Shape{4}, nn::ParamRole::conv_weight, nn::Init::constant(1.0));
  store.add("b", Shape{4}, nn::ParamRole::conv_bias, nn::Init::constant(1.0));
  store.add("gamma", Shape{4}, nn::ParamRole::bn_gamma, nn::Init::constant(1.0));
  store.add("beta", Shape{4}, nn::ParamRole::bn_beta, nn::Init::constant(1.0));
  auto state = train::make_state(store);
  const std::vector<Tensor<double>> zero(4, Tensor<double>(Shape{4}));
  train::sgd_step(store, zero, state, 0.1, 0.0, 0.5);
  CHECK(store.params()[0].value[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  for (std::size_t i = 1; i < 4; ++i) CHECK(store.params()[i].value[0] == 1.0);
  CHECK(state.step == 1);
  CHECK(state.current.lr == 0.1);
  const std::vector<Tensor<double>> too_few(3, Tensor<double>(Shape{4}));
  CHECK_THROWS_AS(train::sgd_step(store, too_few, state, 0.1, 0.0, 0.5), InvalidInput);
}

TEST_CASE("lr 0 leaves detector parameters bit-identical") {
  train::Model model(small_model(), 5);
  const train::Model before = model;
  auto state = train::make_state(model.store());
  std::vector<Tensor<float>> grads;
  for (const auto& p : model.store().params())
    grads.push_back(testing::random_tensor<float>(p.value.shape(), grads.size()));
  for (int k = 0; k < 3; ++k) train::sgd_step(model.store(), grads, state, 0.0, 0.937, 5e-3);
  CHECK(same_params(model.store(), before.store()));
}

TEST_CASE("fixed seed reproduces the loss curve exactly") {
  data::SyntheticConfig sc;
  const auto set = data::make_rectangles(sc, 11);
  for (bool mosaic : {false, true}) {
    CAPTURE(mosaic);
    std::ostringstream log_a, log_b;
    auto opt = short_run(mosaic, 4);
    train::Model a(small_model(), 2), b(small_model(), 2);
    opt.log = &log_a;
    const auto ra = train::train(a, set, set, {"a", "b"}, opt, 9);
    opt.log = &log_b;
    const auto rb = train::train(b, set, set, {"a", "b"}, opt, 9);
    REQUIRE(ra.steps.size() == 4);
    CHECK(log_a.str() == log_b.str());
    for (std::size_t i = 0; i < ra.steps.size(); ++i) CHECK(ra.steps[i].parts.total == rb.steps[i].parts.total);
    CHECK(same_params(a.store(), b.store()));

    train::Model c(small_model(), 2);
    opt.log = nullptr;
    const auto rc = train::train(c, set, set, {"a", "b"}, opt, 10);
    bool differs = false;
    for (std::size_t i = 0; i < rc.steps.size(); ++i) differs |= rc.steps[i].parts.total != ra.steps[i].parts.total;
    CHECK(differs);
  }
}

TEST_CASE("mosaic toggle changes the batches") {
  data::SyntheticConfig sc;
  const auto set = data::make_rectangles(sc, 11);
  train::Model a(small_model(), 2), b(small_model(), 2);
  const auto on = train::train(a, set, set, {"a", "b"}, short_run(true, 2), 9);
  const auto off = train::train(b, set, set, {"a", "b"}, short_run(false, 2), 9);
  CHECK(on.steps[0].parts.total != off.steps[0].parts.total);
}

TEST_CASE("log lines carry step, lr and the loss components") {
  train::StepRecord r{7, 0.01, {0.5, 0.25, 0.125, 0.875}};
  CHECK(train::format_log_line(r) == "7\t0.01\t0.5\t0.25\t0.125\t0.875");
}

TEST_CASE("non-finite loss aborts with the step recorded") {
  data::SyntheticConfig sc;
  const auto set = data::make_rectangles(sc, 11);
  train::Model model(small_model(), 2);
  for (auto& v : model.store().params().back().value.data()) v = std::numeric_limits<float>::quiet_NaN();
  std::ostringstream log;
  auto opt = short_run(false, 3);
  opt.log = &log;
  try {
    train::train(model, set, set, {"a", "b"}, opt, 1);
    FAIL("expected divergence");
  } catch (const train::TrainingDiverged& e) {
    CHECK(e.step() == 0);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
  CHECK(log.str().find("# aborted: non-finite loss at step 0") != std::string::npos);
}

TEST_CASE("training input errors") {
  train::Model model(small_model(), 2);
  const auto opt = short_run(false, 1);
  CHECK_THROWS_AS(train::train(model, {}, {}, {"a", "b"}, opt, 1), InvalidInput);
  data::SyntheticConfig sc;
  const auto set = data::make_rectangles(sc, 11);
  CHECK_THROWS_AS(train::train(model, set, set, {"a"}, opt, 1), InvalidInput);
}

TEST_CASE("best checkpoint tracks the highest validation mAP") {
  data::SyntheticConfig sc;
  const auto set = data::make_rectangles(sc, 11);
  train::Model model(small_model(), 2);
  auto opt = short_run(false, 6);
  opt.eval_every = 1;
  int calls = 0;
  const auto r = train::train(model, set, set, {"a", "b"}, opt, 1, [&](const train::EvalRecord&, const train::Model&) { ++calls; });
  REQUIRE(r.evals.size() == 3);
  double best = -1;
  for (const auto& e : r.evals) best = std::max(best, e.map);
  CHECK(r.best_map == best);
  CHECK(r.best.has_value());
  CHECK(calls >= 1);
}

// Desk model on the 8-image rectangle set. The lr and batchnorm momentum are
// raised from their defaults so 500 steps are enough (see notes in README).
TEST_CASE("overfit: 8 synthetic images reach training mAP 1.0 within 500 steps") {
  data::SyntheticConfig sc;
  const auto set = data::make_rectangles(sc, 7);
  nn::ModelConfig cfg = small_model();
  cfg.bn_momentum = 0.3;
  train::Model model(cfg, 1);
  train::TrainOptions o;
  o.mosaic = false;
  o.optim.epochs = 500;
  o.optim.batch_size = 8;
  o.optim.lr0 = 0.08;
  o.eval_every = 25;
  const auto r = train::train(model, set, set, {"a", "b"}, o, 3);
  REQUIRE(r.steps.size() == 500);
  CHECK(r.best_map == 1.0);
  const double ratio = r.steps.back().parts.total / r.steps[10].parts.total;
  CAPTURE(ratio);
  CHECK(ratio <= 0.10);
}
