#pragma once

#include <array>
#include <vector>

#include "shcanet/geometry.hpp"
#include "shcanet/nn/neck_head.hpp"

namespace shcanet::nn {

double sigmoid(double z);

// Candidates per image, in network-input pixels. A cell/anchor yields one
// candidate for its best class (lowest index on ties) when
// sigmoid(obj) * sigmoid(cls) >= conf_threshold.
template <typename T>
std::vector<std::vector<Detection>> decode(const std::array<Tensor<T>, 3>& raw, const HeadConfig& cfg, double conf_threshold);

// Greedy per-class suppression of boxes with IoU > iou_threshold against a
// kept box. Candidates are visited by (score desc, x1 asc, y1 asc); the
// result is ordered the same way.
std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold);

Detection unletterbox(const Detection& det, const LetterboxMeta& meta);

// Total order used for candidate ranking.
bool ranks_before(const Detection& a, const Detection& b);

}  // namespace shcanet::nn
