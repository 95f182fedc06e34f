#include "shcanet/data/anchors.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "shcanet/error.hpp"
#include "shcanet/rng.hpp"

namespace shcanet::data {

double anchor_distance(const WidthHeight& a, const WidthHeight& b) {
  const double inter = std::min(a[0], b[0]) * std::min(a[1], b[1]);
  return 1.0 - inter / (a[0] * a[1] + b[0] * b[1] - inter);
}

namespace {

// nearest centroid, lowest index on ties
std::size_t nearest(const WidthHeight& b, const std::vector<WidthHeight>& cs, double* dist = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cs.size(); ++j) {
    const double d = anchor_distance(b, cs[j]);
    if (d < bd) bd = d, best = j;
  }
  if (dist) *dist = bd;
  return best;
}

double cost(const std::vector<WidthHeight>& boxes, const std::vector<WidthHeight>& cs,
            const std::vector<std::size_t>& assign) {
  double s = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i) s += anchor_distance(boxes[i], cs[assign[i]]);
  return s;
}

}  // namespace

KMeansResult kmeans_anchors(const std::vector<WidthHeight>& boxes, int k, std::uint64_t seed, int max_iter) {
  require(k >= 1, "k must be at least 1");
  require(max_iter >= 1, "max_iter must be at least 1");
  for (const auto& b : boxes) require(b[0] > 0 && b[1] > 0, "anchor clustering needs positive box sizes");
  const std::set<WidthHeight> distinct(boxes.begin(), boxes.end());
  require(static_cast<int>(distinct.size()) >= k, "anchor clustering needs at least " + std::to_string(k) +
                                                      " distinct box sizes, got " + std::to_string(distinct.size()));
  const std::size_t n = boxes.size();

  Rng rng(seed);
  std::vector<WidthHeight> cs{boxes[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1))]};
  std::vector<double> mind(n);
  for (std::size_t i = 0; i < n; ++i) mind[i] = anchor_distance(boxes[i], cs[0]);
  while (static_cast<int>(cs.size()) < k) {
    const std::size_t far = static_cast<std::size_t>(std::max_element(mind.begin(), mind.end()) - mind.begin());
    cs.push_back(boxes[far]);
    for (std::size_t i = 0; i < n; ++i) mind[i] = std::min(mind[i], anchor_distance(boxes[i], cs.back()));
  }

  KMeansResult r;
  std::vector<std::size_t> assign(n, static_cast<std::size_t>(-1));
  for (int it = 0; it < max_iter; ++it) {
    std::vector<std::size_t> next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = nearest(boxes[i], cs);
    r.assignment_cost.push_back(cost(boxes, cs, next));
    r.iterations = it + 1;
    if (next == assign) {
      r.converged = true;
      break;
    }
    assign = std::move(next);

    std::vector<WidthHeight> sum(cs.size(), {0.0, 0.0});
    std::vector<std::size_t> count(cs.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[assign[i]][0] += boxes[i][0];
      sum[assign[i]][1] += boxes[i][1];
      ++count[assign[i]];
    }
    for (std::size_t j = 0; j < cs.size(); ++j) {
      if (count[j] == 0) continue;
      cs[j] = {sum[j][0] / count[j], sum[j][1] / count[j]};
    }
    for (std::size_t j = 0; j < cs.size(); ++j) {
      if (count[j] != 0) continue;
      std::size_t far = 0;
      double fd = -1;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = anchor_distance(boxes[i], cs[assign[i]]);
        if (d > fd) fd = d, far = i;
      }
      cs[j] = boxes[far];
      assign[far] = j;
    }
    r.update_cost.push_back(cost(boxes, cs, assign));
  }

  std::stable_sort(cs.begin(), cs.end(), [](const WidthHeight& a, const WidthHeight& b) { return a[0] * a[1] < b[0] * b[1]; });
  r.centroids = std::move(cs);
  return r;
}

AnchorSet to_anchor_set(const std::vector<WidthHeight>& centroids) {
  require(centroids.size() == 9, "an anchor set needs 9 centroids, got " + std::to_string(centroids.size()));
  AnchorSet s{};
  for (std::size_t i = 0; i < 9; ++i) s[i / 3][i % 3] = centroids[i];
  return s;
}

double mean_best_iou(const std::vector<WidthHeight>& boxes, const AnchorSet& anchors) {
  if (boxes.empty()) return 0.0;
  double total = 0;
  for (const auto& b : boxes) {
    double best = 0;
    for (const auto& level : anchors)
      for (const auto& a : level) best = std::max(best, 1.0 - anchor_distance(b, a));
    total += best;
  }
  return total / static_cast<double>(boxes.size());
}

}  // namespace shcanet::data
