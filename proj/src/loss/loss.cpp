#include "shcanet/loss/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "shcanet/nn/postprocess.hpp"

namespace shcanet::loss {

double bce(double z, double t) { return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z))); }

void LossGains::validate() const {
  require(box >= 0 && obj >= 0 && cls >= 0, "loss gains must be non-negative");
  require(alpha > 0, "alpha must be positive");
  require(anchor_t > 1, "anchor_t must exceed 1");
  for (double b : balance) require(b >= 0, "objectness balance must be non-negative");
}

TargetSet assign_targets(const std::vector<GroundTruth>& gts, const nn::HeadConfig& cfg, int input_size,
                         double anchor_t) {
  TargetSet out;
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    const auto& g = gts[gi];
    const Box& b = g.box;
    require(b.valid(), "ground truth " + std::to_string(gi) + " has an empty box");
    require(b.x1 >= 0 && b.y1 >= 0 && b.x2 <= input_size && b.y2 <= input_size,
            "ground truth " + std::to_string(gi) + " lies outside the " + std::to_string(input_size) + " px input");
    require(g.class_id >= 0 && g.class_id < cfg.num_classes, "ground truth class id out of range");
    const double w = b.width(), h = b.height(), cx = b.cx(), cy = b.cy();
    for (std::size_t l = 0; l < 3; ++l) {
      const double stride = cfg.strides[l];
      const int grid = input_size / cfg.strides[l];
      const double gx = cx / stride, gy = cy / stride;
      const int ix = std::min(static_cast<int>(gx), grid - 1), iy = std::min(static_cast<int>(gy), grid - 1);
      const double fx = gx - ix, fy = gy - iy;
      for (int a = 0; a < 3; ++a) {
        const auto& an = cfg.anchors[l][static_cast<std::size_t>(a)];
        const double r = std::max({w / an[0], an[0] / w, h / an[1], an[1] / h});
        if (!(r < anchor_t)) continue;
        auto push = [&](int x, int y) {
          out.levels[l].push_back({g.image, a, x, y, static_cast<int>(gi), g.class_id, {cx, cy, w, h}});
        };
        push(ix, iy);
        if (fx < 0.5 && ix - 1 >= 0)
          push(ix - 1, iy);
        else if (fx > 0.5 && ix + 1 < grid)
          push(ix + 1, iy);
        if (fy < 0.5 && iy - 1 >= 0)
          push(ix, iy - 1);
        else if (fy > 0.5 && iy + 1 < grid)
          push(ix, iy + 1);
      }
    }
  }
  return out;
}

CenterBox<Dual<4>> decode_box(double tx, double ty, double tw, double th, int gx, int gy, double stride,
                              const std::array<double, 2>& anchor) {
  auto sig = [](const Dual<4>& z) { return 1.0 / (1.0 + exp(-z)); };
  const auto sx = sig(Dual<4>::variable(tx, 0)), sy = sig(Dual<4>::variable(ty, 1));
  const auto sw = sig(Dual<4>::variable(tw, 2)) * 2.0, sh = sig(Dual<4>::variable(th, 3)) * 2.0;
  return {(sx * 2.0 - 0.5 + static_cast<double>(gx)) * stride, (sy * 2.0 - 0.5 + static_cast<double>(gy)) * stride,
          sw * sw * anchor[0], sh * sh * anchor[1]};
}

template <typename T>
LossResult<T> total_loss(const std::array<ad::Var<T>, 3>& raw, const TargetSet& targets, const nn::HeadConfig& cfg,
                         const LossGains& gains, const DetachedTerms* frozen) {
  gains.validate();
  const int per = cfg.outputs_per_anchor();
  const int nc = cfg.num_classes;
  const std::size_t n_targets = targets.size();
  auto grads = std::make_shared<std::array<Tensor<T>, 3>>();
  LossResult<T> result;
  double box_sum = 0, cls_sum = 0, obj_sum = 0;

  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor<T>& z = raw[l].value();
    const Shape s = z.shape();
    require(s.rank() == 4 && s.c() == cfg.channels(), "loss: level " + std::to_string(l) + " logits have shape " + s.str());
    require(s.n() == raw[0].shape().n(), "loss: levels disagree on batch size");
    Tensor<T>& g = (*grads)[l] = Tensor<T>(s);
    std::vector<double> tobj(static_cast<std::size_t>(s.n()) * 3 * s.h() * s.w(), 0.0);
    auto obj_index = [&](const Target& t) {
      return ((static_cast<std::size_t>(t.image) * 3 + t.anchor) * s.h() + t.gy) * s.w() + t.gx;
    };

    const auto& list = targets.levels[l];
    auto& betas = result.detached.beta[l];
    auto& ious = result.detached.iou[l];
    for (std::size_t i = 0; i < list.size(); ++i) {
      const Target& t = list[i];
      require(t.image >= 0 && t.image < s.n() && t.gx >= 0 && t.gx < s.w() && t.gy >= 0 && t.gy < s.h(),
              "loss: target outside the prediction grid");
      auto at = [&](int k) -> T& { return g.at(t.image, t.anchor * per + k, t.gy, t.gx); };
      auto logit = [&](int k) { return static_cast<double>(z.at(t.image, t.anchor * per + k, t.gy, t.gx)); };

      const auto pred = decode_box(logit(0), logit(1), logit(2), logit(3), t.gx, t.gy, cfg.strides[l],
                                   cfg.anchors[l][static_cast<std::size_t>(t.anchor)]);
      const CenterBox<Dual<4>> gt{t.box.cx, t.box.cy, t.box.w, t.box.h};
      std::optional<double> fb;
      if (frozen) fb = frozen->beta[l].at(i);
      const auto terms = ciou_terms(pred, gt, fb);
      const Dual<4> lb = alpha_ciou_from_terms(terms, gains.alpha);
      box_sum += lb.v;
      for (int k = 0; k < 4; ++k) at(k) += static_cast<T>(gains.box / static_cast<double>(n_targets) * lb.d[static_cast<std::size_t>(k)]);
      betas.push_back(terms.beta);
      ious.push_back(terms.iou.v);

      const double obj_target = std::max(0.0, frozen ? frozen->iou[l].at(i) : terms.iou.v);
      double& cell = tobj[obj_index(t)];
      cell = std::max(cell, obj_target);

      const double scale = gains.cls / (static_cast<double>(n_targets) * nc);
      for (int k = 0; k < nc; ++k) {
        const double y = k == t.class_id ? 1.0 : 0.0;
        cls_sum += bce(logit(5 + k), y);
        at(5 + k) += static_cast<T>(scale * (nn::sigmoid(logit(5 + k)) - y));
      }
    }

    const double cells = static_cast<double>(tobj.size());
    const double scale = gains.obj * gains.balance[l] / cells;
    double level_sum = 0;
    for (int b = 0; b < s.n(); ++b)
      for (int a = 0; a < 3; ++a)
        for (int y = 0; y < s.h(); ++y)
          for (int x = 0; x < s.w(); ++x) {
            const double zo = z.at(b, a * per + 4, y, x);
            const double to = tobj[((static_cast<std::size_t>(b) * 3 + a) * s.h() + y) * s.w() + x];
            level_sum += bce(zo, to);
            g.at(b, a * per + 4, y, x) += static_cast<T>(scale * (nn::sigmoid(zo) - to));
          }
    obj_sum += gains.balance[l] * level_sum / cells;
  }

  auto& parts = result.parts;
  if (n_targets > 0) {
    parts.box = gains.box * box_sum / static_cast<double>(n_targets);
    parts.cls = gains.cls * cls_sum / (static_cast<double>(n_targets) * nc);
  }
  parts.obj = gains.obj * obj_sum;
  parts.total = parts.box + parts.obj + parts.cls;

  result.loss = raw[0].tape().record(Tensor<T>(Shape{1}, static_cast<T>(parts.total)), {raw[0], raw[1], raw[2]},
                                     [grads](ad::Tape<T>& tape, ad::NodeId self) {
                                       const T up = (*tape.grad_if_any(self))[0];
                                       const auto& ids = tape.inputs(self);
                                       for (std::size_t l = 0; l < 3; ++l) {
                                         if (!tape.requires_grad(ids[l])) continue;
                                         Tensor<T>& dst = tape.grad_buffer(ids[l]);
                                         const Tensor<T>& src = (*grads)[l];
                                         for (std::size_t i = 0; i < src.size(); ++i) dst[i] += up * src[i];
                                       }
                                     });
  return result;
}

template LossResult<float> total_loss(const std::array<ad::Var<float>, 3>&, const TargetSet&, const nn::HeadConfig&,
                                      const LossGains&, const DetachedTerms*);
template LossResult<double> total_loss(const std::array<ad::Var<double>, 3>&, const TargetSet&, const nn::HeadConfig&,
                                       const LossGains&, const DetachedTerms*);

}  // namespace shcanet::loss
