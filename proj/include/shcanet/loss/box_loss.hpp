#pragma once

// IoU, CIoU and alpha-CIoU on center-form boxes. Templated on the scalar so
// the same code runs on double and on Dual numbers.

#include <cmath>
#include <numbers>
#include <optional>

#include "shcanet/error.hpp"
#include "shcanet/loss/dual.hpp"

namespace shcanet::loss {

template <typename S>
struct CenterBox {
  S cx, cy, w, h;
};

inline constexpr double kGuard = 1e-9;

template <typename S>
S iou(const CenterBox<S>& a, const CenterBox<S>& b) {
  // Widths come from the same corner differences as the overlap, so a box
  // against itself gives exactly 1.
  const S ax1 = a.cx - a.w * 0.5, ax2 = a.cx + a.w * 0.5, ay1 = a.cy - a.h * 0.5, ay2 = a.cy + a.h * 0.5;
  const S bx1 = b.cx - b.w * 0.5, bx2 = b.cx + b.w * 0.5, by1 = b.cy - b.h * 0.5, by2 = b.cy + b.h * 0.5;
  const S iw = smin(ax2, bx2) - smax(ax1, bx1);
  const S ih = smin(ay2, by2) - smax(ay1, by1);
  const S inter = (value_of(iw) > 0 && value_of(ih) > 0) ? iw * ih : S(0.0);
  return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter);
}

// The three CIoU penalty pieces. `aspect` is beta*v where beta is treated as a
// constant: either computed from values at this point or supplied by caller.
template <typename S>
struct CiouTerms {
  S iou;
  S distance;  // squared center distance over squared enclosing diagonal
  S aspect;
  double beta;
};

template <typename S>
CiouTerms<S> ciou_terms(const CenterBox<S>& pred, const CenterBox<S>& gt, std::optional<double> frozen_beta = {}) {
  using std::atan;
  const S i = iou(pred, gt);
  const S ex = smax(pred.cx + pred.w * 0.5, gt.cx + gt.w * 0.5) - smin(pred.cx - pred.w * 0.5, gt.cx - gt.w * 0.5);
  const S ey = smax(pred.cy + pred.h * 0.5, gt.cy + gt.h * 0.5) - smin(pred.cy - pred.h * 0.5, gt.cy - gt.h * 0.5);
  S c2 = ex * ex + ey * ey;
  if (value_of(c2) < kGuard) c2 = S(kGuard);
  const S dx = pred.cx - gt.cx, dy = pred.cy - gt.cy;
  const S dist = (dx * dx + dy * dy) / c2;
  const S da = atan(gt.w / gt.h) - atan(pred.w / pred.h);
  const S v = (4.0 / (std::numbers::pi * std::numbers::pi)) * da * da;
  double beta;
  if (frozen_beta) {
    beta = *frozen_beta;
  } else {
    const double denom = 1.0 - value_of(i) + value_of(v);
    beta = value_of(v) / (denom < kGuard ? kGuard : denom);
  }
  return {i, dist, v * beta, beta};
}

template <typename S>
S ciou_loss(const CenterBox<S>& pred, const CenterBox<S>& gt, std::optional<double> frozen_beta = {}) {
  const auto t = ciou_terms(pred, gt, frozen_beta);
  return 1.0 - t.iou + t.distance + t.aspect;
}

// 1 - IoU^a + (rho^2/c^2)^a + (beta*v)^a
template <typename S>
S alpha_ciou_from_terms(const CiouTerms<S>& t, double alpha) {
  using std::pow;
  return 1.0 - pow(t.iou, alpha) + pow(t.distance, alpha) + pow(t.aspect, alpha);
}

template <typename S>
S alpha_ciou_loss(const CenterBox<S>& pred, const CenterBox<S>& gt, double alpha, std::optional<double> frozen_beta = {}) {
  require(alpha > 0, "alpha must be positive");
  return alpha_ciou_from_terms(ciou_terms(pred, gt, frozen_beta), alpha);
}

}  // namespace shcanet::loss
