#include "shcanet/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace shcanet::oracle {

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const std::optional<Tensor<double>>& bias,
                      int stride, int pad, int groups) {
  const int n_batch = x.shape().n(), in_c = x.shape().c(), in_h = x.shape().h(), in_w = x.shape().w();
  const int out_c = w.shape()[0], icg = w.shape()[1], k = w.shape()[2];
  const int out_h = (in_h + 2 * pad - k) / stride + 1;
  const int out_w = (in_w + 2 * pad - k) / stride + 1;
  const int ocg = out_c / groups;
  (void)in_c;
  Tensor<double> y(Shape::nchw(n_batch, out_c, out_h, out_w));
  for (int n = 0; n < n_batch; ++n)
    for (int oc = 0; oc < out_c; ++oc)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
          double acc = 0.0;
          for (int ig = 0; ig < icg; ++ig)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                const int ih = oh * stride + kh - pad;
                const int iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= in_h || iw < 0 || iw >= in_w) continue;
                acc += w.at(oc, ig, kh, kw) * x.at(n, (oc / ocg) * icg + ig, ih, iw);
              }
          if (bias) acc += (*bias)[static_cast<std::size_t>(oc)];
          y.at(n, oc, oh, ow) = acc;
        }
  return y;
}

}  // namespace shcanet::oracle

namespace shcanet::oracle {
namespace {

double act(double v, int kind) {
  switch (kind) {
    case 0: return v * std::min(std::max(v + 3.0, 0.0), 6.0) / 6.0;
    case 1: return std::max(v, 0.0);
    default: return v / (1.0 + std::exp(-v));
  }
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor<double> coordatt(const Tensor<double>& x, const Tensor<double>& reduce_w, const Tensor<double>& reduce_b,
                        const Tensor<double>& gate_h_w, const Tensor<double>& gate_h_b, const Tensor<double>& gate_w_w,
                        const Tensor<double>& gate_w_b, int activation) {
  const int N = x.shape().n(), C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  const int M = reduce_w.shape()[0];
  Tensor<double> y(x.shape());
  for (int n = 0; n < N; ++n) {
    std::vector<std::vector<double>> zh(C, std::vector<double>(H)), zw(C, std::vector<double>(W));
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < H; ++i) {
        double s = 0;
        for (int j = 0; j < W; ++j) s += x.at(n, c, i, j);
        zh[c][i] = s / W;
      }
      for (int j = 0; j < W; ++j) {
        double s = 0;
        for (int i = 0; i < H; ++i) s += x.at(n, c, i, j);
        zw[c][j] = s / H;
      }
    }
    // f over the H+W concatenated positions
    std::vector<std::vector<double>> f(M, std::vector<double>(H + W));
    for (int m = 0; m < M; ++m)
      for (int p = 0; p < H + W; ++p) {
        double s = reduce_b[m];
        for (int c = 0; c < C; ++c) s += reduce_w.at(m, c, 0, 0) * (p < H ? zh[c][p] : zw[c][p - H]);
        f[m][p] = act(s, activation);
      }
    for (int c = 0; c < C; ++c) {
      std::vector<double> gh(H), gw(W);
      for (int i = 0; i < H; ++i) {
        double s = gate_h_b[c];
        for (int m = 0; m < M; ++m) s += gate_h_w.at(c, m, 0, 0) * f[m][i];
        gh[i] = logistic(s);
      }
      for (int j = 0; j < W; ++j) {
        double s = gate_w_b[c];
        for (int m = 0; m < M; ++m) s += gate_w_w.at(c, m, 0, 0) * f[m][H + j];
        gw[j] = logistic(s);
      }
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) y.at(n, c, i, j) = x.at(n, c, i, j) * gh[i] * gw[j];
    }
  }
  return y;
}

std::vector<std::vector<Detection>> decode(const std::array<Tensor<double>, 3>& raw, const nn::HeadConfig& cfg,
                                           double conf_threshold) {
  const int per = 5 + cfg.num_classes;
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(raw[0].shape().n()));
  for (int l = 0; l < 3; ++l)
    for (int b = 0; b < raw[l].shape().n(); ++b)
      for (int a = 0; a < 3; ++a)
        for (int gy = 0; gy < raw[l].shape().h(); ++gy)
          for (int gx = 0; gx < raw[l].shape().w(); ++gx) {
            std::vector<double> v(static_cast<std::size_t>(per));
            for (int k = 0; k < per; ++k) v[k] = raw[l].at(b, a * per + k, gy, gx);
            int cls = 0;
            for (int k = 1; k < cfg.num_classes; ++k)
              if (v[5 + k] > v[5 + cls]) cls = k;
            const double score = logistic(v[4]) * logistic(v[5 + cls]);
            if (score < conf_threshold) continue;
            const double s = cfg.strides[l];
            const double cx = (2 * logistic(v[0]) - 0.5 + gx) * s;
            const double cy = (2 * logistic(v[1]) - 0.5 + gy) * s;
            const double w = std::pow(2 * logistic(v[2]), 2) * cfg.anchors[l][a][0];
            const double h = std::pow(2 * logistic(v[3]), 2) * cfg.anchors[l][a][1];
            out[b].push_back({cls, score, {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}});
          }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& candidates, double iou_threshold) {
  const std::size_t n = candidates.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // selection sort by (score desc, x1 asc, y1 asc, class asc)
  auto before = [&](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
    return a.class_id < b.class_id;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (before(candidates[order[j]], candidates[order[i]])) std::swap(order[i], order[j]);
  std::vector<std::vector<double>> overlap(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const Box& a = candidates[order[i]].box;
      const Box& b = candidates[order[j]].box;
      const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
      const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
      const double inter = iw * ih;
      overlap[i][j] = inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
    }
  std::vector<bool> alive(n, false);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < i; ++j)
      if (alive[j] && candidates[order[j]].class_id == candidates[order[i]].class_id && overlap[j][i] > iou_threshold)
        ok = false;
    alive[i] = ok;
    if (ok) out.push_back(candidates[order[i]]);
  }
  return out;
}

}  // namespace shcanet::oracle

namespace shcanet::oracle {

double pixel_iou(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2) {
  const int x0 = std::min(ax1, bx1), y0 = std::min(ay1, by1), x1 = std::max(ax2, bx2), y1 = std::max(ay2, by2);
  long inter = 0, uni = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

loss::TargetSet assign_targets(const std::vector<loss::GroundTruth>& gts, const nn::HeadConfig& cfg, int input_size,
                               double anchor_t) {
  loss::TargetSet out;
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    const Box& b = gts[gi].box;
    const double w = b.x2 - b.x1, h = b.y2 - b.y1, cx = (b.x1 + b.x2) / 2, cy = (b.y1 + b.y2) / 2;
    for (int l = 0; l < 3; ++l) {
      const int grid = input_size / cfg.strides[l];
      const double px = cx / cfg.strides[l], py = cy / cfg.strides[l];
      for (int a = 0; a < 3; ++a) {
        const double aw = cfg.anchors[l][a][0], ah = cfg.anchors[l][a][1];
        if (w / aw >= anchor_t || aw / w >= anchor_t || h / ah >= anchor_t || ah / h >= anchor_t) continue;
        // kind 0 center, 1 horizontal neighbour, 2 vertical neighbour
        std::vector<std::pair<int, loss::Target>> found;
        for (int y = 0; y < grid; ++y)
          for (int x = 0; x < grid; ++x) {
            const bool in_x = px >= x && (px < x + 1 || x == grid - 1);
            const bool in_y = py >= y && (py < y + 1 || y == grid - 1);
            int cell_x = 0, cell_y = 0;
            for (int k = 0; k < grid; ++k) {
              if (px >= k) cell_x = k;
              if (py >= k) cell_y = k;
            }
            const double fx = px - cell_x, fy = py - cell_y;
            int kind = -1;
            if (in_x && in_y)
              kind = 0;
            else if (in_y && ((x == cell_x - 1 && fx < 0.5) || (x == cell_x + 1 && fx > 0.5)))
              kind = 1;
            else if (in_x && ((y == cell_y - 1 && fy < 0.5) || (y == cell_y + 1 && fy > 0.5)))
              kind = 2;
            if (kind < 0) continue;
            found.push_back({kind, {gts[gi].image, a, x, y, static_cast<int>(gi), gts[gi].class_id, {cx, cy, w, h}}});
          }
        for (int kind = 0; kind < 3; ++kind)
          for (const auto& f : found)
            if (f.first == kind) out.levels[l].push_back(f.second);
      }
    }
  }
  return out;
}

loss::LossComponents total_loss(const std::array<Tensor<double>, 3>& raw, const loss::TargetSet& targets,
                                const nn::HeadConfig& cfg, const loss::LossGains& gains) {
  const int per = 5 + cfg.num_classes;
  const double pi = 3.14159265358979323846;
  auto log_sig = [](double z) { return -std::log1p(std::exp(-z)); };  // log(sigmoid(z)), z moderate
  std::size_t n_targets = 0;
  for (const auto& l : targets.levels) n_targets += l.size();
  double box = 0, cls = 0, obj = 0;
  for (int l = 0; l < 3; ++l) {
    const Tensor<double>& z = raw[l];
    const int N = z.shape().n(), H = z.shape().h(), W = z.shape().w();
    std::vector<double> tobj(static_cast<std::size_t>(N * 3 * H * W), 0.0);
    for (const auto& t : targets.levels[l]) {
      auto v = [&](int k) { return z.at(t.image, t.anchor * per + k, t.gy, t.gx); };
      const double s = cfg.strides[l];
      const double pcx = (2 * logistic(v(0)) - 0.5 + t.gx) * s, pcy = (2 * logistic(v(1)) - 0.5 + t.gy) * s;
      const double pw = std::pow(2 * logistic(v(2)), 2) * cfg.anchors[l][t.anchor][0];
      const double ph = std::pow(2 * logistic(v(3)), 2) * cfg.anchors[l][t.anchor][1];
      const double a1 = pcx - pw / 2, b1 = pcy - ph / 2, a2 = pcx + pw / 2, b2 = pcy + ph / 2;
      const double g1 = t.box.cx - t.box.w / 2, h1 = t.box.cy - t.box.h / 2, g2 = t.box.cx + t.box.w / 2,
                   h2 = t.box.cy + t.box.h / 2;
      const double iw = std::max(0.0, std::min(a2, g2) - std::max(a1, g1));
      const double ih = std::max(0.0, std::min(b2, h2) - std::max(b1, h1));
      const double inter = iw * ih;
      const double iou = inter / (pw * ph + t.box.w * t.box.h - inter);
      const double cw = std::max(a2, g2) - std::min(a1, g1), ch = std::max(b2, h2) - std::min(b1, h1);
      const double c2 = std::max(cw * cw + ch * ch, 1e-9);
      const double rho2 = (pcx - t.box.cx) * (pcx - t.box.cx) + (pcy - t.box.cy) * (pcy - t.box.cy);
      const double dv = std::atan(t.box.w / t.box.h) - std::atan(pw / ph);
      const double vv = 4 / (pi * pi) * dv * dv;
      const double beta = vv / std::max(1 - iou + vv, 1e-9);
      box += 1 - std::pow(iou, gains.alpha) + std::pow(rho2 / c2, gains.alpha) + std::pow(beta * vv, gains.alpha);
      double& cell = tobj[static_cast<std::size_t>(((t.image * 3 + t.anchor) * H + t.gy) * W + t.gx)];
      cell = std::max(cell, iou);
      for (int k = 0; k < cfg.num_classes; ++k) {
        const double y = k == t.class_id ? 1 : 0;
        cls += -(y * log_sig(v(5 + k)) + (1 - y) * log_sig(-v(5 + k)));
      }
    }
    double level = 0;
    for (int n = 0; n < N; ++n)
      for (int a = 0; a < 3; ++a)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const double zo = z.at(n, a * per + 4, y, x);
            const double t = tobj[static_cast<std::size_t>(((n * 3 + a) * H + y) * W + x)];
            level += -(t * log_sig(zo) + (1 - t) * log_sig(-zo));
          }
    obj += gains.balance[l] * level / tobj.size();
  }
  loss::LossComponents c;
  if (n_targets > 0) {
    c.box = gains.box * box / n_targets;
    c.cls = gains.cls * cls / (n_targets * cfg.num_classes);
  }
  c.obj = gains.obj * obj;
  c.total = c.box + c.obj + c.cls;
  return c;
}

}  // namespace shcanet::oracle

namespace shcanet::oracle {

std::vector<std::vector<int>> greedy_assignments(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                                                 double iou_threshold) {
  const std::size_t D = dets.size(), G = gts.size();
  // visiting order: repeatedly the highest remaining score, earliest index on ties
  std::vector<std::size_t> visit;
  std::vector<bool> taken(D, false);
  for (std::size_t k = 0; k < D; ++k) {
    std::size_t best = D;
    for (std::size_t i = 0; i < D; ++i)
      if (!taken[i] && (best == D || dets[i].score > dets[best].score)) best = i;
    taken[best] = true;
    visit.push_back(best);
  }
  std::vector<std::vector<double>> m(D, std::vector<double>(G));
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t g = 0; g < G; ++g) m[i][g] = iou(dets[i].box, gts[g].box);

  std::vector<std::vector<int>> out;
  std::vector<int> a(D, -1);
  // odometer over (G + 1)^D maps
  while (true) {
    std::vector<int> holder(G, -1);
    bool injective = true;
    for (std::size_t i = 0; i < D && injective; ++i)
      if (a[i] >= 0) {
        injective = holder[static_cast<std::size_t>(a[i])] < 0;
        holder[static_cast<std::size_t>(a[i])] = static_cast<int>(i);
      }
    if (injective) {
      bool ok = true;
      std::vector<bool> used(G, false);
      for (std::size_t i : visit) {
        int want = -1;
        double best = -1;
        for (std::size_t g = 0; g < G; ++g) {
          if (used[g] || gts[g].class_id != dets[i].class_id || m[i][g] < iou_threshold) continue;
          if (m[i][g] > best) best = m[i][g], want = static_cast<int>(g);
        }
        if (a[i] != want) {
          ok = false;
          break;
        }
        if (want >= 0) used[static_cast<std::size_t>(want)] = true;
      }
      if (ok) out.push_back(a);
    }
    std::size_t d = 0;
    while (d < D && a[d] == static_cast<int>(G) - 1) a[d++] = -1;
    if (d == D) break;
    ++a[d];
  }
  return out;
}

MapResult evaluate_map(const std::vector<std::vector<Detection>>& predictions,
                       const std::vector<std::vector<Annotation>>& ground_truth, int num_classes, double iou_threshold) {
  MapResult r;
  double sum = 0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    struct Item {
      double score;
      std::size_t image;
      Box box;
      std::size_t seq;
    };
    std::vector<Item> items;
    std::size_t seq = 0;
    int npos = 0;
    std::vector<std::vector<bool>> claimed(ground_truth.size());
    for (std::size_t img = 0; img < predictions.size(); ++img) {
      // within an image detections are visited by score, earlier first on ties
      std::vector<Detection> d = predictions[img];
      std::stable_sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
      for (const auto& x : d)
        if (x.class_id == c) items.push_back({x.score, img, x.box, seq++});
      for (const auto& g : ground_truth[img]) npos += g.class_id == c;
      claimed[img].assign(ground_truth[img].size(), false);
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
      return a.score != b.score ? a.score > b.score : a.seq < b.seq;
    });
    // Matching is per image in score order, which the pooled order preserves.
    std::vector<double> tp(items.size(), 0), fp(items.size(), 0);
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto& gts = ground_truth[items[k].image];
      int best = -1;
      double ov = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].class_id != c || claimed[items[k].image][g]) continue;
        const double v = iou(items[k].box, gts[g].box);
        if (v > ov) ov = v, best = static_cast<int>(g);
      }
      if (best >= 0 && ov >= iou_threshold) {
        claimed[items[k].image][static_cast<std::size_t>(best)] = true;
        tp[k] = 1;
      } else {
        fp[k] = 1;
      }
    }
    const bool excluded = npos == 0 && items.empty();
    double ap = 0;
    if (npos > 0 && !items.empty()) {
      std::vector<double> mrec{0.0}, mpre{0.0};
      double ctp = 0, cfp = 0;
      for (std::size_t k = 0; k < items.size(); ++k) {
        ctp += tp[k], cfp += fp[k];
        mrec.push_back(ctp / npos);
        mpre.push_back(ctp / (ctp + cfp));
      }
      mrec.push_back(1.0);
      mpre.push_back(0.0);
      for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
      for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
    }
    r.ap.push_back(ap);
    r.excluded.push_back(excluded);
    if (!excluded) sum += ap, ++counted;
  }
  r.map = counted ? sum / counted : 0.0;
  return r;
}

}  // namespace shcanet::oracle
