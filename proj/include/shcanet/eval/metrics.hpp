#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "shcanet/geometry.hpp"

namespace shcanet::eval {

struct MatchResult {
  std::vector<std::size_t> order;  // detection indices, score descending (stable)
  std::vector<bool> tp;            // per entry of `order`
  std::vector<int> matched_gt;     // per entry of `order`, -1 for a false positive
  int unmatched_gt = 0;
};

// Each detection, best score first, takes the still-unmatched ground truth of
// its class with the highest IoU >= threshold (lowest index on ties).
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                             double iou_threshold = 0.5);

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

// Cumulative precision/recall after each ranked flag; empty when num_gt == 0.
std::vector<PrPoint> pr_curve(const std::vector<bool>& flags, int num_gt);

// All-point interpolation: sum over steps of (R_i - R_{i-1}) * max precision at recall >= R_i.
double average_precision(const std::vector<PrPoint>& curve);

struct ClassStats {
  std::string name;
  double ap = 0;
  int num_gt = 0;
  int num_det = 0;
  bool excluded = false;  // no ground truth and no detections: left out of the mean
  double precision = 0;   // at the operating threshold
  double recall = 0;
};

struct EvalReport {
  std::vector<ClassStats> classes;
  double map = 0;
  double iou_threshold = 0.5;
  double conf_threshold = 0.25;  // operating point for P, R and the confusion matrix
  double precision = 0;
  double recall = 0;
  // (nc + 1) x (nc + 1): rows ground truth, columns prediction, last index background
  std::vector<std::vector<int>> confusion;
  int images = 0;
  int detections = 0;            // all scored detections that were evaluated
  int detections_at_conf = 0;    // those at or above conf_threshold
  double detections_per_image = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

struct EvalOptions {
  double iou_threshold = 0.5;
  double conf_threshold = 0.25;
};

// Per-image detections and ground truths, same length; classes named by `class_names`.
EvalReport evaluate(const std::vector<std::vector<Detection>>& predictions,
                    const std::vector<std::vector<Annotation>>& ground_truth,
                    const std::vector<std::string>& class_names, const EvalOptions& opt = {});

}  // namespace shcanet::eval
