#pragma once

#include <array>
#include <vector>

#include "shcanet/ad/tape.hpp"
#include "shcanet/geometry.hpp"
#include "shcanet/loss/box_loss.hpp"
#include "shcanet/nn/neck_head.hpp"

namespace shcanet::loss {

// Binary cross-entropy on a logit, -[t log s(z) + (1-t) log(1-s(z))], in the
// overflow-free form max(z,0) - z t + log1p(exp(-|z|)).
double bce(double logit, double target);

struct LossGains {
  double box = 0.05;
  double obj = 1.0;
  double cls = 0.5;
  double alpha = 3.0;
  std::array<double, 3> balance{4.0, 1.0, 0.4};  // objectness weight per level
  double anchor_t = 4.0;

  void validate() const;
};

// A ground-truth box in network-input pixels.
struct GroundTruth {
  int image = 0;
  int class_id = 0;
  Box box;
};

struct Target {
  int image = 0;
  int anchor = 0;
  int gx = 0, gy = 0;
  int gt_index = 0;
  int class_id = 0;
  CenterBox<double> box{0, 0, 0, 0};  // pixels
};

struct TargetSet {
  std::array<std::vector<Target>, 3> levels;
  std::size_t size() const { return levels[0].size() + levels[1].size() + levels[2].size(); }
};

// Anchor a on level l matches when max(w/aw, aw/w, h/ah, ah/h) < anchor_t.
// Each match claims the cell holding the box center and, per axis, the
// neighbouring cell on the side the center leans toward (fractional offset
// below or above one half) when that cell exists. Entries are ordered by
// (gt index, level, anchor), then center, x-neighbour, y-neighbour.
TargetSet assign_targets(const std::vector<GroundTruth>& gts, const nn::HeadConfig& cfg, int input_size,
                         double anchor_t);

struct LossComponents {
  double box = 0, obj = 0, cls = 0, total = 0;  // gain-weighted; total = box + obj + cls
};

// Values the loss treats as constants: the CIoU trade-off weight and the IoU
// used as objectness target, one per target entry.
struct DetachedTerms {
  std::array<std::vector<double>, 3> beta;
  std::array<std::vector<double>, 3> iou;
};

template <typename T>
struct LossResult {
  ad::Var<T> loss;  // shape {1}
  LossComponents parts;
  DetachedTerms detached;
};

// loss = box_gain * mean over targets of alpha-CIoU(decoded pred, gt)
//      + obj_gain * sum_l balance_l * mean over level-l cells of BCE(obj, target)
//      + cls_gain * mean over targets and classes of BCE(class logit, one-hot)
// Objectness target of a cell is the largest detached IoU among its targets, 0 elsewhere.
// Passing `frozen` substitutes its detached values (used by gradient checks).
template <typename T>
LossResult<T> total_loss(const std::array<ad::Var<T>, 3>& raw, const TargetSet& targets, const nn::HeadConfig& cfg,
                         const LossGains& gains, const DetachedTerms* frozen = nullptr);

// Decoded prediction of one (anchor, cell) in pixels, as dual numbers in
// (tx, ty, tw, th).
CenterBox<Dual<4>> decode_box(double tx, double ty, double tw, double th, int gx, int gy, double stride,
                              const std::array<double, 2>& anchor);

}  // namespace shcanet::loss
