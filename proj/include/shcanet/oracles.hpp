#pragma once

// Straight-line reference implementations. They share no code path with the
// library kernels they are compared against and favour obviousness over speed.
// Used by the test suites and the `selfcheck` command.

#include <array>
#include <optional>
#include <vector>

#include "shcanet/geometry.hpp"
#include "shcanet/loss/loss.hpp"
#include "shcanet/nn/neck_head.hpp"
#include "shcanet/tensor.hpp"

namespace shcanet::oracle {

// Six nested loops, accumulating over (input channel, kernel row, kernel col)
// from zero and adding the bias last.
Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const std::optional<Tensor<double>>& bias,
                      int stride, int pad, int groups);

// Coordinate attention written out per element: average each row and each
// column, reduce with a shared 1x1 map + activation, expand with two 1x1 maps,
// sigmoid, then scale every pixel by its row gate and column gate.
// activation: 0 hardswish, 1 relu, 2 silu.
Tensor<double> coordatt(const Tensor<double>& x, const Tensor<double>& reduce_w, const Tensor<double>& reduce_b,
                        const Tensor<double>& gate_h_w, const Tensor<double>& gate_h_b, const Tensor<double>& gate_w_w,
                        const Tensor<double>& gate_w_b, int activation);

// One candidate per (image, level, anchor, cell) with the highest class
// probability, in the same coordinate convention as the library decode.
std::vector<std::vector<Detection>> decode(const std::array<Tensor<double>, 3>& raw, const nn::HeadConfig& cfg,
                                           double conf_threshold);

// Quadratic suppression: candidate i survives iff no higher-ranked surviving
// candidate of its class overlaps it by more than the threshold. Survival is
// decided by scanning a full pairwise IoU matrix.
std::vector<Detection> nms(const std::vector<Detection>& candidates, double iou_threshold);

// IoU of integer-cornered boxes by counting unit pixels inside each box.
double pixel_iou(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2);

// Every (level, anchor, cell) triple is tested against every ground truth;
// a cell qualifies when the anchor passes the ratio test and the cell is the
// center cell or the neighbour the center leans toward on one axis.
loss::TargetSet assign_targets(const std::vector<loss::GroundTruth>& gts, const nn::HeadConfig& cfg, int input_size,
                               double anchor_t);

// Straight transcription of the training loss in double precision: corner-form
// overlap, explicit logs of the sigmoid, per-cell max objectness target.
loss::LossComponents total_loss(const std::array<Tensor<double>, 3>& raw, const loss::TargetSet& targets,
                                const nn::HeadConfig& cfg, const loss::LossGains& gains);

// Enumerates every injective detection -> ground truth (or none) map and keeps
// the ones where each detection, visited best score first, holds the best
// same-class ground truth not held by an earlier detection. Returns all
// survivors (the greedy rule should leave exactly one); entries are per input
// detection index. Small instances only.
std::vector<std::vector<int>> greedy_assignments(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                                                 double iou_threshold);

struct MapResult {
  std::vector<double> ap;  // per class
  std::vector<bool> excluded;
  double map = 0;
};

// VOC-style evaluator: per class, pool detections over images, sort, match,
// then integrate the precision envelope with recall sentinels 0 and 1.
MapResult evaluate_map(const std::vector<std::vector<Detection>>& predictions,
                       const std::vector<std::vector<Annotation>>& ground_truth, int num_classes, double iou_threshold);

}  // namespace shcanet::oracle
