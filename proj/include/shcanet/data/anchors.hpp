#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace shcanet::data {

using WidthHeight = std::array<double, 2>;
using AnchorSet = std::array<std::array<WidthHeight, 3>, 3>;  // [level][anchor], ascending area

// 1 - IoU of two boxes sharing their top-left corner
double anchor_distance(const WidthHeight& a, const WidthHeight& b);

struct KMeansResult {
  std::vector<WidthHeight> centroids;  // ascending by area
  int iterations = 0;
  bool converged = false;
  // Sum of distances from each box to its assigned centroid, recorded right
  // after every assignment step (entry 0 uses the initial centroids).
  std::vector<double> assignment_cost;
  // Same sum after each mean update, against the freshly updated centroids.
  std::vector<double> update_cost;
};

// Lloyd iterations under anchor_distance. Initialisation: a seeded random first
// centroid, then repeatedly the box farthest from all chosen centroids. Stops
// when assignments repeat or after max_iter. A cluster that empties is moved
// onto the box farthest from its current centroid.
KMeansResult kmeans_anchors(const std::vector<WidthHeight>& boxes, int k, std::uint64_t seed, int max_iter = 300);

// Nine centroids in area order, grouped in thirds (smallest to the stride-8 level).
AnchorSet to_anchor_set(const std::vector<WidthHeight>& centroids);

// Mean over boxes of the best IoU against any anchor.
double mean_best_iou(const std::vector<WidthHeight>& boxes, const AnchorSet& anchors);

}  // namespace shcanet::data
