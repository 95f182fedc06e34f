#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "shcanet/ad/gradcheck.hpp"
#include "shcanet/loss/loss.hpp"
#include "shcanet/oracles.hpp"
#include "test_util.hpp"

using namespace shcanet;
using loss::CenterBox;
using ad::Tape;
using ad::Var;

namespace {

CenterBox<double> corners(double x1, double y1, double x2, double y2) {
  return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

CenterBox<double> random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0, 50), size(1, 30);
  return {pos(rng), pos(rng), size(rng), size(rng)};
}

std::array<Tensor<double>, 3> random_raw(const nn::HeadConfig& cfg, int batch, int input, std::uint64_t seed) {
  std::array<Tensor<double>, 3> raw;
  for (int l = 0; l < 3; ++l) {
    const int g = input / cfg.strides[l];
    raw[l] = testing::random_tensor(Shape{batch, cfg.channels(), g, g}, seed + l, -2.0, 2.0);
  }
  return raw;
}

std::vector<loss::GroundTruth> random_gts(std::mt19937_64& rng, int n, int batch, int input) {
  std::uniform_real_distribution<double> size(6, input * 0.6), u(0, 1);
  std::vector<loss::GroundTruth> out;
  for (int i = 0; i < n; ++i) {
    const double w = size(rng), h = size(rng);
    const double x = u(rng) * (input - w), y = u(rng) * (input - h);
    out.push_back({static_cast<int>(rng() % static_cast<unsigned>(batch)), static_cast<int>(rng() % 2u),
                   {x, y, x + w, y + h}});
  }
  return out;
}

bool same_target(const loss::Target& a, const loss::Target& b) {
  return a.image == b.image && a.anchor == b.anchor && a.gx == b.gx && a.gy == b.gy && a.gt_index == b.gt_index &&
         a.class_id == b.class_id && a.box.cx == b.box.cx && a.box.cy == b.box.cy && a.box.w == b.box.w &&
         a.box.h == b.box.h;
}

loss::LossResult<double> evaluate(const std::array<Tensor<double>, 3>& raw, const loss::TargetSet& ts,
                                  const nn::HeadConfig& cfg, const loss::LossGains& gains) {
  Tape<double> tape;
  std::array<Var<double>, 3> v{tape.constant(raw[0]), tape.constant(raw[1]), tape.constant(raw[2])};
  return loss::total_loss(v, ts, cfg, gains);
}

}  // namespace

TEST_CASE("iou worked examples") {
  CHECK(loss::iou(corners(0, 0, 2, 2), corners(0, 0, 2, 2)) == 1.0);
  CHECK(loss::iou(corners(0, 0, 2, 2), corners(5, 5, 6, 6)) == 0.0);
  CHECK(loss::iou(corners(0, 0, 2, 2), corners(2, 0, 4, 2)) == 0.0);  // touching edge
  CHECK(loss::iou(corners(0, 0, 2, 2), corners(1, 1, 3, 3)) == doctest::Approx(1.0 / 7).epsilon(1e-15));
  CHECK(oracle::pixel_iou(0, 0, 2, 2, 1, 1, 3, 3) == doctest::Approx(1.0 / 7).epsilon(1e-15));
}

TEST_CASE("iou equals pixel counting on 500 integer box pairs") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> p(0, 20), s(1, 12);
  for (int i = 0; i < 500; ++i) {
    const int ax = p(rng), ay = p(rng), aw = s(rng), ah = s(rng), bx = p(rng), by = p(rng), bw = s(rng), bh = s(rng);
    const double analytic = loss::iou(corners(ax, ay, ax + aw, ay + ah), corners(bx, by, bx + bw, by + bh));
    const double counted = oracle::pixel_iou(ax, ay, ax + aw, ay + ah, bx, by, bx + bw, by + bh);
    // Same rational number; allow the last-bit difference of the two divisions' operands.
    REQUIRE(analytic == doctest::Approx(counted).epsilon(1e-15));
  }
}

TEST_CASE("iou invariants: symmetric, translation and scale invariant, bounded") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> shift(-100, 100), scale(0.1, 10);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    const double v = loss::iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(loss::iou(b, a) == doctest::Approx(v).epsilon(1e-12));
    const double dx = shift(rng), dy = shift(rng), k = scale(rng);
    const CenterBox<double> at{a.cx + dx, a.cy + dy, a.w, a.h}, bt{b.cx + dx, b.cy + dy, b.w, b.h};
    CHECK(loss::iou(at, bt) == doctest::Approx(v).epsilon(1e-9));
    const CenterBox<double> as{a.cx * k, a.cy * k, a.w * k, a.h * k}, bs{b.cx * k, b.cy * k, b.w * k, b.h * k};
    CHECK(loss::iou(as, bs) == doctest::Approx(v).epsilon(1e-9));
  }
}

TEST_CASE("ciou and alpha-ciou hand cases") {
  const auto outer = corners(0, 0, 2, 2), inner = corners(0.5, 0.5, 1.5, 1.5);
  CHECK(std::abs(loss::ciou_loss(outer, inner) - 0.75) <= 1e-9);
  CHECK(std::abs(loss::alpha_ciou_loss(outer, inner, 3.0) - 0.984375) <= 1e-9);
  CHECK(loss::ciou_loss(outer, outer) == 0.0);
  CHECK(loss::alpha_ciou_loss(outer, outer, 3.0) == 0.0);
  // same aspect ratio means no aspect penalty
  const auto t = loss::ciou_terms(corners(0, 0, 4, 2), corners(3, 1, 9, 4));
  CHECK(t.aspect == 0.0);
}

TEST_CASE("alpha = 1 reduces to ciou on 1000 random pairs") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    REQUIRE(std::abs(loss::alpha_ciou_loss(a, b, 1.0) - loss::ciou_loss(a, b)) <= 1e-12);
  }
}

TEST_CASE("ciou is non-negative and zero only for coincident boxes") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    CHECK(loss::ciou_loss(a, b) > 0.0);
    CHECK(loss::alpha_ciou_loss(a, b, 3.0) > 0.0);
    CHECK(loss::ciou_loss(a, a) == 0.0);
  }
}

TEST_CASE("degenerate enclosing box stays finite") {
  // both boxes tiny and nearly coincident: enclosing diagonal falls under the guard
  const CenterBox<double> p{1, 1, 1e-6, 1e-6}, g{1 + 1e-7, 1, 1e-6, 1e-6};
  const double l = loss::ciou_loss(p, g);
  CHECK(std::isfinite(l));
  CHECK(l >= 0.0);
  CHECK(std::isfinite(loss::alpha_ciou_loss(p, g, 3.0)));
}

TEST_CASE("alpha-ciou gradient matches central differences") {
  using D = loss::Dual<4>;
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int i = 0; i < 300; ++i) {
    const auto p = random_box(rng), g = random_box(rng);
    const double beta = loss::ciou_terms(p, g).beta;
    const CenterBox<D> pd{D::variable(p.cx, 0), D::variable(p.cy, 1), D::variable(p.w, 2), D::variable(p.h, 3)};
    const CenterBox<D> gd{g.cx, g.cy, g.w, g.h};
    const D l = loss::alpha_ciou_loss(pd, gd, 3.0, beta);
    for (int k = 0; k < 4; ++k) {
      // long double keeps the difference quotient clear of roundoff on tiny gradients
      const long double h = 1e-5L;
      auto shifted = [&](long double s) {
        long double q[4] = {p.cx, p.cy, p.w, p.h};
        q[k] += s;
        const CenterBox<long double> gl{g.cx, g.cy, g.w, g.h};
        return loss::alpha_ciou_loss(CenterBox<long double>{q[0], q[1], q[2], q[3]}, gl, 3.0, beta);
      };
      const double num = static_cast<double>((shifted(h) - shifted(-h)) / (2 * h));
      const double ana = l.d[static_cast<std::size_t>(k)];
      worst = std::max(worst, std::abs(ana - num) / std::max(1e-8, std::abs(ana) + std::abs(num)));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("bce values and stability") {
  CHECK(loss::bce(0.0, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(loss::bce(40.0, 1.0) < 1e-17);
  CHECK(loss::bce(-40.0, 0.0) < 1e-17);
  CHECK(std::isfinite(loss::bce(1000.0, 0.0)));
  CHECK(loss::bce(1000.0, 0.0) == doctest::Approx(1000.0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> z(-20, 20), t(0, 1);
  for (int i = 0; i < 2000; ++i) {
    const long double zz = z(rng), tt = t(rng);
    const long double s = 1.0L / (1.0L + std::exp(-zz));
    const long double direct = -(tt * std::log(s) + (1 - tt) * std::log1p(-s));
    CHECK(loss::bce(static_cast<double>(zz), static_cast<double>(tt)) ==
          doctest::Approx(static_cast<double>(direct)).epsilon(1e-9));
  }
}

TEST_CASE("assignment: anchor-shaped gt matches, 5x wide gt does not") {
  nn::HeadConfig cfg;
  const auto an = cfg.anchors[1][2];  // level 1, stride 16
  const double cx = 16 * 10 + 8, cy = 16 * 7 + 8;
  const Box b = Box::from_center(cx, cy, an[0], an[1]);
  const auto ts = loss::assign_targets({{0, 1, b}}, cfg, 320, 4.0);
  bool found = false;
  for (const auto& t : ts.levels[1])
    if (t.anchor == 2 && t.gx == 10 && t.gy == 7) found = true;
  CHECK(found);

  const Box wide = Box::from_center(cx, cy, an[0] * 5, an[1]);
  const auto tw = loss::assign_targets({{0, 1, wide}}, cfg, 320, 4.0);
  for (const auto& t : tw.levels[1]) CHECK(t.anchor != 2);
}

TEST_CASE("assignment rejects boxes outside the input") {
  nn::HeadConfig cfg;
  CHECK_THROWS_AS(loss::assign_targets({{0, 0, {-1, 0, 10, 10}}}, cfg, 64, 4.0), Error);
  CHECK_THROWS_AS(loss::assign_targets({{0, 0, {0, 0, 65, 10}}}, cfg, 64, 4.0), Error);
  CHECK_THROWS_AS(loss::assign_targets({{0, 0, {5, 5, 5, 10}}}, cfg, 64, 4.0), Error);
}

TEST_CASE("assignment equals exhaustive reference on random sets") {
  nn::HeadConfig cfg;
  std::mt19937_64 rng(77);
  std::size_t total = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int input = trial % 2 ? 128 : 96;
    auto gts = random_gts(rng, 1 + trial % 7, 3, input);
    // exercise exact half offsets and the far edge
    if (trial % 5 == 0) gts.push_back({0, 0, {input - 40.0, input - 24.0, double(input), double(input)}});
    if (trial % 5 == 1) gts.push_back({1, 1, {8, 8, 24, 24}});
    const auto got = loss::assign_targets(gts, cfg, input, 4.0);
    const auto ref = oracle::assign_targets(gts, cfg, input, 4.0);
    for (int l = 0; l < 3; ++l) {
      REQUIRE(got.levels[l].size() == ref.levels[l].size());
      for (std::size_t i = 0; i < got.levels[l].size(); ++i) REQUIRE(same_target(got.levels[l][i], ref.levels[l][i]));
    }
    total += got.size();
  }
  CHECK(total > 200);
}

TEST_CASE("assignment is deterministic and permutation-covariant") {
  nn::HeadConfig cfg;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const auto gts = random_gts(rng, 6, 2, 128);
    std::vector<int> perm(gts.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<loss::GroundTruth> shuffled(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) shuffled[static_cast<std::size_t>(perm[i])] = gts[i];

    const auto a = loss::assign_targets(gts, cfg, 128, 4.0);
    const auto again = loss::assign_targets(gts, cfg, 128, 4.0);
    const auto b = loss::assign_targets(shuffled, cfg, 128, 4.0);
    for (int l = 0; l < 3; ++l) {
      REQUIRE(a.levels[l].size() == again.levels[l].size());
      for (std::size_t i = 0; i < a.levels[l].size(); ++i) CHECK(same_target(a.levels[l][i], again.levels[l][i]));
      // map b back to original gt indices, stable-sort, compare entry for entry
      std::vector<int> inverse(gts.size());
      for (std::size_t i = 0; i < gts.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
      auto mapped = b.levels[l];
      for (auto& t : mapped) t.gt_index = inverse[static_cast<std::size_t>(t.gt_index)];
      std::stable_sort(mapped.begin(), mapped.end(),
                       [](const loss::Target& x, const loss::Target& y) { return x.gt_index < y.gt_index; });
      REQUIRE(mapped.size() == a.levels[l].size());
      for (std::size_t i = 0; i < mapped.size(); ++i) CHECK(same_target(mapped[i], a.levels[l][i]));
    }
  }
}

TEST_CASE("total loss: nothing to detect and nothing predicted gives ~0") {
  nn::HeadConfig cfg;
  auto raw = random_raw(cfg, 2, 64, 1);
  for (auto& r : raw) r.fill(-40.0);
  const auto res = evaluate(raw, {}, cfg, {});
  CHECK(res.parts.box == 0.0);
  CHECK(res.parts.cls == 0.0);
  CHECK(res.parts.total < 1e-15);
  // with random logits the obj term is still computed
  const auto r2 = evaluate(random_raw(cfg, 2, 64, 1), {}, cfg, {});
  CHECK(r2.parts.obj > 0.1);
  CHECK(r2.parts.box == 0.0);
}

TEST_CASE("total loss: perfect decode zeroes the box term") {
  nn::HeadConfig cfg;
  auto raw = random_raw(cfg, 1, 64, 4);
  const Box b{20, 12, 40, 44};
  const auto ts = loss::assign_targets({{0, 0, b}}, cfg, 64, 4.0);
  REQUIRE(ts.size() > 0);
  auto logit = [](double p) { return std::log(p / (1 - p)); };
  const int per = cfg.outputs_per_anchor();
  for (int l = 0; l < 3; ++l)
    for (const auto& t : ts.levels[l]) {
      const double s = cfg.strides[l];
      const auto an = cfg.anchors[l][static_cast<std::size_t>(t.anchor)];
      raw[l].at(0, t.anchor * per + 0, t.gy, t.gx) = logit((t.box.cx / s - t.gx + 0.5) / 2);
      raw[l].at(0, t.anchor * per + 1, t.gy, t.gx) = logit((t.box.cy / s - t.gy + 0.5) / 2);
      raw[l].at(0, t.anchor * per + 2, t.gy, t.gx) = logit(std::sqrt(t.box.w / an[0]) / 2);
      raw[l].at(0, t.anchor * per + 3, t.gy, t.gx) = logit(std::sqrt(t.box.h / an[1]) / 2);
    }
  const auto res = evaluate(raw, ts, cfg, {});
  CHECK(res.parts.box < 1e-12);
  for (const auto& level : res.detached.iou)
    for (double v : level) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("total loss matches the scalar reference") {
  nn::HeadConfig cfg;
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto raw = random_raw(cfg, 2, 96, 100 + static_cast<std::uint64_t>(trial));
    const auto ts = loss::assign_targets(random_gts(rng, 4, 2, 96), cfg, 96, 4.0);
    loss::LossGains gains;
    if (trial % 2) gains.alpha = 1.0;
    const auto got = evaluate(raw, ts, cfg, gains).parts;
    const auto ref = oracle::total_loss(raw, ts, cfg, gains);
    CHECK(got.box == doctest::Approx(ref.box).epsilon(1e-6));
    CHECK(got.obj == doctest::Approx(ref.obj).epsilon(1e-6));
    CHECK(got.cls == doctest::Approx(ref.cls).epsilon(1e-6));
    CHECK(got.total == doctest::Approx(ref.total).epsilon(1e-6));
    CHECK(got.total >= 0.0);
  }
}

TEST_CASE("total loss gradient with detached terms held fixed") {
  nn::HeadConfig cfg;
  std::mt19937_64 rng(44);
  const auto raw = random_raw(cfg, 1, 64, 500);
  const auto ts = loss::assign_targets(random_gts(rng, 3, 1, 64), cfg, 64, 4.0);
  REQUIRE(ts.size() > 0);
  const auto frozen = evaluate(raw, ts, cfg, {}).detached;
  const auto graph = [&](Tape<double>&, std::span<const Var<double>> l) {
    return loss::total_loss(std::array<Var<double>, 3>{l[0], l[1], l[2]}, ts, cfg, loss::LossGains{}, &frozen).loss;
  };
  // Loss is O(1), so a double difference quotient only resolves ~1e-10; untouched
  // objectness cells far from any target have gradients below that.
  const auto r = ad::gradcheck(graph, {raw[0], raw[1], raw[2]}, {1e-5, 0, 0, 1e-6});
  CHECK(r.max_rel_error <= 1e-4);
  CHECK(r.probes == raw[0].size() + raw[1].size() + raw[2].size());
}

TEST_CASE("gradient descent on raw logits lowers the loss window by window") {
  nn::HeadConfig cfg;
  std::mt19937_64 rng(6);
  auto raw = random_raw(cfg, 2, 64, 900);
  const auto ts = loss::assign_targets(random_gts(rng, 3, 2, 64), cfg, 64, 4.0);
  std::vector<double> history;
  for (int step = 0; step < 200; ++step) {
    Tape<double> tape;
    std::array<Var<double>, 3> v{tape.leaf(raw[0]), tape.leaf(raw[1]), tape.leaf(raw[2])};
    const auto res = loss::total_loss(v, ts, cfg, loss::LossGains{});
    history.push_back(res.parts.total);
    tape.backward(res.loss);
    for (int l = 0; l < 3; ++l) {
      const auto& g = tape.grad(v[l]);
      for (std::size_t i = 0; i < g.size(); ++i) raw[l][i] -= 20.0 * g[i];
    }
  }
  for (std::size_t w = 50; w < history.size(); w += 50) CHECK(history[w] < history[w - 50]);
  CHECK(history.back() < 0.5 * history.front());
}
