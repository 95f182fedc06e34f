#include "shcanet/cli/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "shcanet/ad/gradcheck.hpp"
#include "shcanet/cli/commands.hpp"
#include "shcanet/data/anchors.hpp"
#include "shcanet/data/augment.hpp"
#include "shcanet/data/synthetic.hpp"
#include "shcanet/eval/metrics.hpp"
#include "shcanet/loss/box_loss.hpp"
#include "shcanet/oracles.hpp"
#include "shcanet/rng.hpp"

namespace shcanet::checks {

using ad::Tape;
using ad::Var;
using Leaves = std::span<const Var<double>>;

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor<double> rand_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(mix64(seed));
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = uniform_real(rng, lo, hi);
  return t;
}

Var<double> project(Var<double> y, std::uint64_t seed) { return ad::dot_constant(y, rand_tensor(y.shape(), seed)); }

// Runs `body` and turns an escaping exception into a failed outcome.
Outcome guarded(const std::string& name, const std::function<Outcome()>& body) {
  try {
    Outcome o = body();
    o.name = name;
    return o;
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

constexpr double kGradBound = 1e-4;

Outcome grad_outcome(const ad::GradcheckResult& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "max rel err %.2e over %zu probes (input %zu, index %zu)", r.max_rel_error, r.probes,
                r.worst_input, r.worst_index);
  return {"", r.max_rel_error <= kGradBound && r.probes > 0, buf};
}

// Module gradcheck: the input tensors plus every parameter of `store` become leaves.
struct ModuleCase {
  std::vector<Tensor<double>> inputs;
  std::function<Var<double>(nn::Context<double>&, Leaves)> body;
};

Outcome module_check(nn::ParamStore<double>& store, const ModuleCase& mc, ad::GradcheckOptions opt) {
  std::vector<Tensor<double>> leaves = mc.inputs;
  const std::size_t first = leaves.size();
  for (const auto& p : store.params()) leaves.push_back(p.value);
  auto graph = [&](Tape<double>& tape, Leaves l) {
    nn::Context<double> ctx(tape, store, ad::BnMode::train);
    for (std::size_t k = 0; k < store.params().size(); ++k) ctx.bind(k, l[first + k]);
    return mc.body(ctx, l);
  };
  return grad_outcome(ad::gradcheck(graph, leaves, opt));
}

std::vector<Outcome> op_checks() {
  const auto x = rand_tensor(Shape::nchw(2, 4, 4, 6), 21, -2.0, 2.0);
  const auto y = rand_tensor(Shape::nchw(2, 4, 4, 6), 22);
  auto hs = rand_tensor(Shape::nchw(2, 4, 4, 6), 23, -5.0, 5.0);
  for (auto& v : hs.data())
    if (std::abs(std::abs(v) - 3.0) < 0.1) v += 0.25;  // clear of the hard-swish kinks
  auto rl = x;
  for (auto& v : rl.data())
    if (std::abs(v) < 0.05) v += 0.1;  // clear of the relu kink
  Tensor<double> mean(Shape{3}), var(Shape{3}, 1.0);
  const auto bx = rand_tensor(Shape::nchw(2, 3, 3, 3), 5, -2.0, 2.0);
  const auto bg = rand_tensor(Shape{3}, 6, 0.5, 1.5);
  const auto bb = rand_tensor(Shape{3}, 7);
  const auto cx = rand_tensor(Shape::nchw(2, 4, 6, 5), 1);
  const auto cw = rand_tensor(Shape::nchw(6, 2, 3, 3), 2);
  const auto cb = rand_tensor(Shape{6}, 3);
  const auto dw = rand_tensor(Shape::nchw(4, 1, 5, 5), 4);

  struct Case {
    const char* name;
    ad::GraphFn fn;
    std::vector<Tensor<double>> in;
  };
  const std::vector<Case> cases{
      {"conv2d grouped, strided, bias",
       [](Tape<double>&, Leaves l) { return project(ad::conv2d<double>(l[0], l[1], l[2], {2, 1, 2}), 9); },
       {cx, cw, cb}},
      {"conv2d depthwise", [](Tape<double>&, Leaves l) { return project(ad::conv2d<double>(l[0], l[1], std::nullopt, {2, 2, 4}), 9); },
       {cx, dw}},
      {"batchnorm2d train",
       [&](Tape<double>&, Leaves l) {
         return project(ad::batchnorm2d<double>(l[0], l[1], l[2], {&mean, &var}, ad::BnMode::train, 0.03, 1e-3), 11);
       },
       {bx, bg, bb}},
      {"batchnorm2d eval",
       [&](Tape<double>&, Leaves l) {
         return project(ad::batchnorm2d<double>(l[0], l[1], l[2], {&mean, &var}, ad::BnMode::eval, 0.03, 1e-3), 11);
       },
       {bx, bg, bb}},
      {"sigmoid", [](Tape<double>&, Leaves l) { return project(ad::sigmoid(l[0]), 1); }, {x}},
      {"silu", [](Tape<double>&, Leaves l) { return project(ad::silu(l[0]), 1); }, {x}},
      {"hardswish", [](Tape<double>&, Leaves l) { return project(ad::hardswish(l[0]), 1); }, {hs}},
      {"relu", [](Tape<double>&, Leaves l) { return project(ad::relu(l[0]), 1); }, {rl}},
      {"add, mul", [](Tape<double>&, Leaves l) { return project(ad::mul(ad::add(l[0], l[1]), l[1]), 1); }, {x, y}},
      {"scale", [](Tape<double>&, Leaves l) { return project(ad::scale(l[0], 0.37), 2); }, {x}},
      {"concat, split",
       [](Tape<double>&, Leaves l) {
         auto parts = ad::split(ad::concat<double>({l[0], l[1]}, 1), 1, {3, 5});
         return ad::add(project(parts[0], 2), project(parts[1], 3));
       },
       {x, y}},
      {"reshape", [](Tape<double>&, Leaves l) { return project(ad::reshape(l[0], Shape::nchw(2, 4, 24, 1)), 7); }, {x}},
      {"channel_shuffle", [](Tape<double>&, Leaves l) { return project(ad::channel_shuffle(l[0], 2), 4); }, {x}},
      {"global_pool_h", [](Tape<double>&, Leaves l) { return project(ad::global_pool_h(l[0]), 5); }, {x}},
      {"global_pool_w", [](Tape<double>&, Leaves l) { return project(ad::global_pool_w(l[0]), 5); }, {x}},
      {"upsample_nearest2x", [](Tape<double>&, Leaves l) { return project(ad::upsample_nearest2x(l[0]), 6); }, {x}},
      {"maxpool2x2", [](Tape<double>&, Leaves l) { return project(ad::maxpool2x2(l[0]), 6); }, {x}},
      {"coord_gate",
       [](Tape<double>&, Leaves l) {
         return project(ad::coord_gate(l[0], ad::sigmoid(ad::global_pool_h(l[1])), ad::sigmoid(ad::global_pool_w(l[1]))), 8);
       },
       {x, y}},
      {"weighted_fusion fast",
       [](Tape<double>&, Leaves l) {
         return project(ad::weighted_fusion<double>({l[0], l[1]}, l[2], ad::FusionMode::fast_normalized, 1e-4), 9);
       },
       {x, y, Tensor<double>(Shape{2}, {0.7, 1.3})}},
      {"weighted_fusion sum",
       [](Tape<double>&, Leaves l) {
         return project(ad::weighted_fusion<double>({l[0], l[1]}, std::nullopt, ad::FusionMode::plain_sum, 1e-4), 9);
       },
       {x, y}},
      {"sum", [](Tape<double>&, Leaves l) { return ad::sum(ad::mul(l[0], l[0])); }, {x}},
  };
  std::vector<Outcome> out;
  for (const auto& c : cases)
    out.push_back(guarded(std::string("gradcheck op ") + c.name, [&] { return grad_outcome(ad::gradcheck(c.fn, c.in)); }));
  return out;
}

// Box loss: forward-mode derivatives against long double central differences
// (the loss is O(1) while some gradients are ~1e-9).
Outcome alpha_ciou_check() {
  using D = loss::Dual<4>;
  Rng rng(5);
  double worst = 0;
  for (int i = 0; i < 300; ++i) {
    auto box = [&] {
      return loss::CenterBox<double>{uniform_real(rng, 0, 50), uniform_real(rng, 0, 50), uniform_real(rng, 1, 30),
                                     uniform_real(rng, 1, 30)};
    };
    const auto p = box(), g = box();
    const double beta = loss::ciou_terms(p, g).beta;
    const loss::CenterBox<D> pd{D::variable(p.cx, 0), D::variable(p.cy, 1), D::variable(p.w, 2), D::variable(p.h, 3)};
    const D l = loss::alpha_ciou_loss(pd, loss::CenterBox<D>{g.cx, g.cy, g.w, g.h}, 3.0, beta);
    for (int k = 0; k < 4; ++k) {
      const long double h = 1e-5L;
      auto shifted = [&](long double s) {
        long double q[4] = {p.cx, p.cy, p.w, p.h};
        q[k] += s;
        return loss::alpha_ciou_loss(loss::CenterBox<long double>{q[0], q[1], q[2], q[3]},
                                     loss::CenterBox<long double>{g.cx, g.cy, g.w, g.h}, 3.0, beta);
      };
      const double num = static_cast<double>((shifted(h) - shifted(-h)) / (2 * h));
      const double ana = l.d[static_cast<std::size_t>(k)];
      worst = std::max(worst, std::abs(ana - num) / std::max(1e-8, std::abs(ana) + std::abs(num)));
    }
  }
  return {"", worst <= kGradBound, fmt("max rel err %.2e over 300 pairs x 4 coordinates", worst)};
}

Outcome total_loss_check() {
  nn::HeadConfig cfg;
  std::array<Tensor<double>, 3> raw;
  for (int l = 0; l < 3; ++l) raw[l] = rand_tensor(Shape{1, cfg.channels(), 64 >> (3 + l), 64 >> (3 + l)}, 500 + l, -2, 2);
  const std::vector<loss::GroundTruth> gts{{0, 0, {6, 8, 30, 40}}, {0, 1, {34, 20, 60, 50}}, {0, 0, {20, 30, 28, 44}}};
  const auto ts = loss::assign_targets(gts, cfg, 64, 4.0);
  Tape<double> t0;
  const auto frozen = loss::total_loss<double>({t0.constant(raw[0]), t0.constant(raw[1]), t0.constant(raw[2])}, ts, cfg,
                                               loss::LossGains{})
                          .detached;
  const auto graph = [&](Tape<double>&, Leaves l) {
    return loss::total_loss(std::array<Var<double>, 3>{l[0], l[1], l[2]}, ts, cfg, loss::LossGains{}, &frozen).loss;
  };
  // Cells far from every target carry gradients below what an O(1) loss
  // resolves in double, hence the 1e-6 floor.
  return grad_outcome(ad::gradcheck(graph, {raw[0], raw[1], raw[2]}, {1e-5, 0, 0, 1e-6}));
}

std::vector<Outcome> block_checks() {
  std::vector<Outcome> out;
  out.push_back(guarded("gradcheck block CBS", [] {
    nn::ParamStore<double> store(41);
    const auto cbs = nn::make_cbs(store, "cbs", 4, 6, 3, 2);
    return module_check(store,
                        {{rand_tensor(Shape::nchw(2, 4, 7, 6), 42)},
                         [&](nn::Context<double>& ctx, Leaves l) { return project(nn::forward(ctx, cbs, l[0]), 43); }},
                        {1e-5, 0, 0, 1e-8});
  }));
  for (int stride : {1, 2}) {
    out.push_back(guarded("gradcheck block shuffle unit stride " + std::to_string(stride), [stride] {
      nn::ParamStore<double> store(51);
      const auto unit = nn::make_shuffle_unit(store, "unit", nn::ShuffleUnitConfig{8, stride, 3, 0});
      // Betas of a batchnorm feeding another batchnorm have exactly zero true
      // gradient, so the floor sits above their rounding noise.
      return module_check(store,
                          {{rand_tensor(Shape::nchw(2, 8, 6, 6), 52)},
                           [&](nn::Context<double>& ctx, Leaves l) { return project(nn::forward(ctx, unit, l[0]), 53); }},
                          {1e-4, 0, 0, 1e-6});
    }));
  }
  out.push_back(guarded("gradcheck block coordinate attention", [] {
    nn::ParamStore<double> store(61);
    nn::CoordAttConfig cfg;
    cfg.channels = 16;
    const auto ca = nn::make_coordatt(store, "ca", cfg);
    return module_check(store,
                        {{rand_tensor(Shape::nchw(2, 16, 5, 4), 62)},
                         [&](nn::Context<double>& ctx, Leaves l) { return project(nn::forward(ctx, ca, l[0]), 63); }},
                        {1e-5, 0, 0, 1e-8});
  }));
  for (bool bifpn : {true, false}) {
    out.push_back(guarded(std::string("gradcheck block neck repeat ") + (bifpn ? "bifpn" : "panet-sum"), [bifpn] {
      nn::ParamStore<double> store(71);
      nn::BiFpnConfig cfg{8, 1};
      if (!bifpn) {
        cfg.fusion = ad::FusionMode::plain_sum;
        cfg.skip_edges = false;
      }
      const auto neck = nn::make_bifpn(store, "neck", {6, 8, 10}, cfg);
      return module_check(store,
                          {{rand_tensor(Shape::nchw(2, 6, 8, 8), 72), rand_tensor(Shape::nchw(2, 8, 4, 4), 73),
                            rand_tensor(Shape::nchw(2, 10, 2, 2), 74)},
                           [&](nn::Context<double>& ctx, Leaves l) {
                             const auto o = nn::forward<double>(ctx, neck, {l[0], l[1], l[2]});
                             return ad::add(ad::add(project(o[0], 75), project(o[1], 76)), project(o[2], 77));
                           }},
                          {1e-4, 12, 78, 1e-6});
    }));
  }
  out.push_back(guarded("gradcheck alpha-ciou", alpha_ciou_check));
  out.push_back(guarded("gradcheck total loss", total_loss_check));
  return out;
}

}  // namespace

std::vector<Outcome> gradient_suite() {
  auto out = op_checks();
  for (auto& o : block_checks()) out.push_back(std::move(o));
  return out;
}

Outcome loss_oracles() {
  return guarded("loss oracles", [] {
    using B = loss::CenterBox<double>;
    Rng rng(8);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const B p{uniform_real(rng, 0, 100), uniform_real(rng, 0, 100), uniform_real(rng, 0.5, 60), uniform_real(rng, 0.5, 60)};
      const B g{uniform_real(rng, 0, 100), uniform_real(rng, 0, 100), uniform_real(rng, 0.5, 60), uniform_real(rng, 0.5, 60)};
      worst = std::max(worst, std::abs(loss::alpha_ciou_loss(p, g, 1.0) - loss::ciou_loss(p, g)));
    }
    bool identical = true;
    for (int i = 0; i < 100; ++i) {
      const B b{uniform_real(rng, 0, 100), uniform_real(rng, 0, 100), uniform_real(rng, 0.5, 60), uniform_real(rng, 0.5, 60)};
      identical &= loss::ciou_loss(b, b) == 0.0 && loss::alpha_ciou_loss(b, b, 3.0) == 0.0;
    }
    // 10x10 inside 20x20, same center
    const B inner{10, 10, 10, 10}, outer{10, 10, 20, 20};
    const double c1 = loss::ciou_loss(inner, outer), c3 = loss::alpha_ciou_loss(inner, outer, 3.0);
    const bool concentric = std::abs(c1 - 0.75) <= 1e-9 && std::abs(c3 - 0.984375) <= 1e-9;
    char buf[160];
    std::snprintf(buf, sizeof buf, "alpha=1 vs ciou max diff %.1e; identical boxes zero: %s; concentric %.12f / %.12f",
                  worst, identical ? "yes" : "no", c1, c3);
    return Outcome{"", worst <= 1e-12 && identical && concentric, buf};
  });
}

Outcome iou_oracle() {
  return guarded("iou oracle", [] {
    Rng rng(12);
    int bad = 0;
    for (int i = 0; i < 500; ++i) {
      auto corner = [&](int& a1, int& a2) {
        a1 = static_cast<int>(uniform_int(rng, 0, 30));
        a2 = a1 + static_cast<int>(uniform_int(rng, 1, 20));
      };
      int ax1, ax2, ay1, ay2, bx1, bx2, by1, by2;
      corner(ax1, ax2), corner(ay1, ay2), corner(bx1, bx2), corner(by1, by2);
      const double want = oracle::pixel_iou(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2);
      const loss::CenterBox<double> a{(ax1 + ax2) / 2.0, (ay1 + ay2) / 2.0, double(ax2 - ax1), double(ay2 - ay1)};
      const loss::CenterBox<double> b{(bx1 + bx2) / 2.0, (by1 + by2) / 2.0, double(bx2 - bx1), double(by2 - by1)};
      const bool ok = loss::iou(a, b) == want && shcanet::iou(Box{double(ax1), double(ay1), double(ax2), double(ay2)},
                                                               Box{double(bx1), double(by1), double(bx2), double(by2)}) == want;
      bad += !ok;
    }
    return Outcome{"", bad == 0, std::to_string(500 - bad) + "/500 pairs exact"};
  });
}

Outcome metric_oracles() {
  return guarded("metric oracles", [] {
    const double ap = eval::average_precision(eval::pr_curve({true, false, true}, 2));
    const bool walk = std::abs(ap - 5.0 / 6) <= 1e-9;
    Rng rng(3);
    int violations = 0;
    for (int t = 0; t < 1000; ++t) {
      std::vector<bool> flags(static_cast<std::size_t>(uniform_int(rng, 0, 30)));
      for (std::size_t i = 0; i < flags.size(); ++i) flags[i] = uniform_int(rng, 0, 1) == 1;
      const int tps = static_cast<int>(std::count(flags.begin(), flags.end(), true));
      const int num_gt = tps + static_cast<int>(uniform_int(rng, 1, 5));
      const double base = eval::average_precision(eval::pr_curve(flags, num_gt));
      auto fp = flags, tp = flags;
      fp.push_back(false);
      tp.push_back(true);
      violations += base < 0 || base > 1;
      violations += eval::average_precision(eval::pr_curve(fp, num_gt)) > base;
      violations += eval::average_precision(eval::pr_curve(tp, num_gt)) < base;
    }
    // identity oracle on the rectangle set
    const auto set = data::make_rectangles(data::SyntheticConfig{}, 3);
    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<Annotation>> gts;
    for (const auto& s : set) {
      gts.push_back(s.annotations);
      preds.emplace_back();
      for (const auto& a : s.annotations) preds.back().push_back({a.class_id, 1.0, a.box});
    }
    const double map = eval::evaluate(preds, gts, {"a", "b"}).map;
    char buf[160];
    std::snprintf(buf, sizeof buf, "walked AP %.9f; monotonicity violations %d/3000; identity mAP %.17g", ap, violations, map);
    return Outcome{"", walk && violations == 0 && map == 1.0, buf};
  });
}

Outcome nms_equivalence() {
  return guarded("nms equivalence", [] {
    Rng rng(77);
    int bad = 0;
    for (int t = 0; t < 1000; ++t) {
      std::vector<Detection> cands(static_cast<std::size_t>(uniform_int(rng, 0, 20)));
      for (auto& d : cands) {
        const double x = uniform_real(rng, 0, 80), y = uniform_real(rng, 0, 80);
        d = {static_cast<int>(uniform_int(rng, 0, 2)), std::round(uniform_real(rng, 0, 1) * 20) / 20,
             {x, y, x + uniform_real(rng, 2, 40), y + uniform_real(rng, 2, 40)}};
      }
      const double thr = t % 3 == 0 ? 0.3 : t % 3 == 1 ? 0.45 : 0.7;
      bad += !(nn::nms(cands, thr) == oracle::nms(cands, thr));
    }
    return Outcome{"", bad == 0, std::to_string(1000 - bad) + "/1000 instances identical"};
  });
}

Outcome anchor_recovery() {
  return guarded("anchor clustering", [] {
    const std::vector<data::WidthHeight> centers{{10, 13}, {16, 30}, {33, 23}, {30, 61}, {62, 45},
                                                 {59, 119}, {116, 90}, {156, 198}, {373, 326}};
    double worst = 0;
    bool repeatable = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto boxes = data::planted_boxes(centers, 40, 0.01, seed);
      const auto r = data::kmeans_anchors(boxes, 9, seed);
      if (r.centroids.size() != 9) return Outcome{"", false, "wrong centroid count"};
      for (std::size_t i = 0; i < 9; ++i)
        for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(r.centroids[i][k] / centers[i][k] - 1));
      repeatable &= data::kmeans_anchors(boxes, 9, seed).centroids == r.centroids;
    }
    return Outcome{"", worst <= 0.02 && repeatable,
                   fmt("worst relative error %.4f over 10 seeds", worst) + (repeatable ? ", repeatable" : ", NOT repeatable")};
  });
}

Outcome structural_parity() {
  return guarded("structural parity", [] {
    auto on_cfg = nn::BackboneConfig::desk();
    auto off_cfg = on_cfg;
    off_cfg.attention = false;
    nn::ParamStore<float> on_store(21), off_store(21);
    const auto on = nn::make_backbone(on_store, "bb", on_cfg);
    const auto off = nn::make_backbone(off_store, "bb", off_cfg);
    for (const auto& st : on.stages) {
      on_store.params()[st.attention->gate_h.weight].value.fill(0.f);
      on_store.params()[st.attention->gate_w.weight].value.fill(0.f);
      on_store.params()[*st.attention->gate_h.bias].value.fill(40.f);  // sigmoid(40) == 1 in float
      on_store.params()[*st.attention->gate_w.bias].value.fill(40.f);
    }
    Tensor<float> x(Shape::nchw(2, 3, 64, 64));
    Rng rng(22);
    for (auto& v : x.data()) v = static_cast<float>(uniform01(rng));
    bool same = true;
    for (auto mode : {ad::BnMode::train, ad::BnMode::eval}) {
      Tape<float> ta(false), tb(false);
      nn::Context<float> ca(ta, on_store, mode), cb(tb, off_store, mode);
      const auto a = nn::forward(ca, on, ta.constant(x));
      const auto b = nn::forward(cb, off, tb.constant(x));
      for (int l = 0; l < 3; ++l) same &= a[l].value() == b[l].value();
    }
    // reduce (c*m + m) plus two expansions (m*c + c), m = max(8, c/32)
    std::size_t formula = 0;
    for (const auto& st : on_cfg.stages) {
      const auto c = static_cast<std::size_t>(st.channels);
      const std::size_t m = std::max<std::size_t>(8, c / static_cast<std::size_t>(on_cfg.ca_reduction));
      formula += c * m + m + 2 * (m * c + c);
    }
    nn::ModelConfig mon, moff;
    mon.input_size = moff.input_size = 64;
    moff.backbone.attention = false;
    const std::size_t delta = nn::Detector<float>(mon, 0).count_parameters() - nn::Detector<float>(moff, 0).count_parameters();
    const std::size_t bb_delta = on_store.count_parameters() - off_store.count_parameters();
    char buf[160];
    std::snprintf(buf, sizeof buf, "identity gates bit-identical: %s; parameter delta %zu (detector) %zu (backbone) vs formula %zu",
                  same ? "yes" : "no", delta, bb_delta, formula);
    return Outcome{"", same && delta == formula && bb_delta == formula, buf};
  });
}

Outcome letterbox_mosaic() {
  return guarded("letterbox and mosaic", [] {
    Rng rng(10);
    double worst = 0;
    int out_of_canvas = 0;
    for (int t = 0; t < 10000; ++t) {
      const int w = static_cast<int>(uniform_int(rng, 1, 4000)), h = static_cast<int>(uniform_int(rng, 1, 4000));
      const int out = t % 3 == 0 ? 320 : 640;
      const auto m = data::letterbox_meta(w, h, out);
      const double x1 = uniform_real(rng, 0, w - 0.5), y1 = uniform_real(rng, 0, h - 0.5);
      const Box b{x1, y1, uniform_real(rng, x1, w), uniform_real(rng, y1, h)};
      const Box f = m.forward(b);
      out_of_canvas += f.x1 < 0 || f.y1 < 0 || f.x2 > out + 1e-9 || f.y2 > out + 1e-9;
      const Box back = m.inverse(f);
      worst = std::max({worst, std::abs(back.x1 - b.x1), std::abs(back.y1 - b.y1), std::abs(back.x2 - b.x2),
                        std::abs(back.y2 - b.y2)});
    }
    data::SyntheticConfig sc;
    sc.count = 12;
    sc.num_classes = 3;
    sc.max_objects = 3;
    sc.min_side = 4;
    const auto set = data::make_rectangles(sc, 8);
    int mosaic_bad = 0;
    std::size_t kept = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      Rng pick(seed);
      std::vector<const data::Sample*> four;
      std::multiset<int> classes_in;
      for (int i = 0; i < 4; ++i) {
        four.push_back(&set[static_cast<std::size_t>(uniform_int(pick, 0, 11))]);
        for (const auto& a : four.back()->annotations) classes_in.insert(a.class_id);
      }
      const int out = seed % 2 ? 64 : 96;
      const auto m = data::mosaic(four, seed, out);
      for (const auto& a : m.annotations) {
        ++kept;
        mosaic_bad += !a.box.valid() || a.box.x1 < 0 || a.box.y1 < 0 || a.box.x2 > out || a.box.y2 > out ||
                      classes_in.count(a.class_id) == 0;
      }
    }
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "letterbox worst round trip %.3g px, %d boxes off canvas; mosaic %zu boxes, %d out of bounds or unknown class",
                  worst, out_of_canvas, kept, mosaic_bad);
    return Outcome{"", worst <= 0.5 && out_of_canvas == 0 && mosaic_bad == 0 && kept > 0, buf};
  });
}

Outcome random_init_scores() {
  return guarded("random-init score bound", [] {
    double top = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      nn::Detector<float> model(nn::ModelConfig{}, seed);
      const int s = model.config().input_size;
      Tensor<float> gray(Shape::nchw(1, 3, s, s), 114.0f / 255.0f);
      const auto raw = nn::infer(model, gray);
      const auto cands = nn::decode(raw, model.config().head, 0.0);
      for (const auto& d : cands[0]) top = std::max(top, d.score);
    }
    return Outcome{"", top < 0.99, fmt("highest candidate score %.4f over 3 seeds at 640 px", top)};
  });
}

std::vector<Outcome> selfcheck() {
  auto out = gradient_suite();
  for (auto* f : {&loss_oracles, &iou_oracle, &metric_oracles, &nms_equivalence, &anchor_recovery, &structural_parity,
                  &letterbox_mosaic, &random_init_scores})
    out.push_back(f());
  return out;
}

cli::RunConfig overfit_config(const cli::AblationRow& row) {
  cli::RunConfig c;
  c.model.input_size = 64;
  c.model.bn_momentum = 0.3;
  c.class_names = {"a", "b"};
  c.optim.lr0 = 0.08;
  c.optim.epochs = 500;
  c.optim.batch_size = 8;
  c.mosaic = false;
  c.eval_every = 25;
  c.seed = 3;
  cli::apply_row(c, row);
  c.validate();
  return c;
}

OverfitReport overfit(const cli::AblationRow& row) {
  const auto cfg = overfit_config(row);
  const auto set = data::make_rectangles(data::SyntheticConfig{}, 7);
  train::Model model(cfg.model, 1);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train::train(model, set, set, cfg.class_names, cli::train_options(cfg), cfg.seed);
  OverfitReport rep;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.row = cli::row_name(row);
  rep.best_map = r.best_map;
  rep.steps = r.steps.size();
  for (const auto& e : r.evals)
    if (e.map == 1.0) {
      rep.first_perfect_epoch = e.epoch;
      break;
    }
  if (r.steps.size() > 10) {
    rep.step10_loss = r.steps[10].parts.total;
    rep.final_loss = r.steps.back().parts.total;
  }
  return rep;
}

}  // namespace shcanet::checks
