#include "shcanet/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "shcanet/error.hpp"

namespace shcanet::eval {

namespace {

std::vector<std::size_t> by_score(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                             double iou_threshold) {
  MatchResult r;
  r.order = by_score(dets);
  std::vector<bool> used(gts.size(), false);
  for (std::size_t k : r.order) {
    const Detection& d = dets[k];
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].class_id != d.class_id) continue;
      const double v = iou(d.box, gts[g].box);
      if (v > best_iou || (v == best_iou && best < 0)) best_iou = v, best = static_cast<int>(g);
    }
    if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    r.tp.push_back(best >= 0);
    r.matched_gt.push_back(best);
  }
  r.unmatched_gt = static_cast<int>(std::count(used.begin(), used.end(), false));
  return r;
}

std::vector<PrPoint> pr_curve(const std::vector<bool>& flags, int num_gt) {
  std::vector<PrPoint> out;
  if (num_gt <= 0) return out;
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i];
    out.push_back({static_cast<double>(tp) / num_gt, static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  return out;
}

double average_precision(const std::vector<PrPoint>& curve) {
  // suffix maximum of precision, then sum recall steps
  std::vector<double> envelope(curve.size());
  double m = 0;
  for (std::size_t i = curve.size(); i-- > 0;) envelope[i] = m = std::max(m, curve[i].precision);
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev) * envelope[i];
    prev = curve[i].recall;
  }
  return ap;
}

EvalReport evaluate(const std::vector<std::vector<Detection>>& predictions,
                    const std::vector<std::vector<Annotation>>& ground_truth, const std::vector<std::string>& class_names,
                    const EvalOptions& opt) {
  require(predictions.size() == ground_truth.size(), "evaluate: " + std::to_string(predictions.size()) +
                                                         " prediction lists for " +
                                                         std::to_string(ground_truth.size()) + " images");
  const int nc = static_cast<int>(class_names.size());
  require(nc > 0, "evaluate: no classes");
  auto check_class = [&](int c, const char* what) {
    require(c >= 0 && c < nc, std::string("evaluate: ") + what + " class id " + std::to_string(c) +
                                  " does not fit " + std::to_string(nc) + " classes");
  };

  EvalReport rep;
  rep.iou_threshold = opt.iou_threshold;
  rep.conf_threshold = opt.conf_threshold;
  rep.images = static_cast<int>(predictions.size());
  rep.confusion.assign(static_cast<std::size_t>(nc + 1), std::vector<int>(static_cast<std::size_t>(nc + 1), 0));
  rep.classes.resize(static_cast<std::size_t>(nc));
  for (int c = 0; c < nc; ++c) rep.classes[static_cast<std::size_t>(c)].name = class_names[static_cast<std::size_t>(c)];

  // ranked (score, tp) per class, images in order
  struct Ranked {
    double score;
    bool tp;
  };
  std::vector<std::vector<Ranked>> ranked(static_cast<std::size_t>(nc));
  std::vector<int> tp_at(static_cast<std::size_t>(nc), 0), det_at(static_cast<std::size_t>(nc), 0);

  for (std::size_t img = 0; img < predictions.size(); ++img) {
    const auto& dets = predictions[img];
    const auto& gts = ground_truth[img];
    for (const auto& d : dets) check_class(d.class_id, "detection");
    for (const auto& g : gts) {
      check_class(g.class_id, "ground truth");
      ++rep.classes[static_cast<std::size_t>(g.class_id)].num_gt;
    }
    const MatchResult m = match_detections(dets, gts, opt.iou_threshold);
    for (std::size_t i = 0; i < m.order.size(); ++i) {
      const Detection& d = dets[m.order[i]];
      auto& cs = rep.classes[static_cast<std::size_t>(d.class_id)];
      ++cs.num_det;
      ranked[static_cast<std::size_t>(d.class_id)].push_back({d.score, m.tp[i]});
      if (d.score >= opt.conf_threshold) {
        ++det_at[static_cast<std::size_t>(d.class_id)];
        tp_at[static_cast<std::size_t>(d.class_id)] += m.tp[i];
      }
    }
    rep.detections += static_cast<int>(dets.size());

    // Confusion at the operating point: same-class matches first (these are
    // the true positives), then leftovers pair across classes by IoU.
    std::vector<Detection> kept;
    for (const auto& d : dets)
      if (d.score >= opt.conf_threshold) kept.push_back(d);
    rep.detections_at_conf += static_cast<int>(kept.size());
    const MatchResult same = match_detections(kept, gts, opt.iou_threshold);
    std::vector<bool> gt_used(gts.size(), false);
    std::vector<std::size_t> left;
    for (std::size_t i = 0; i < same.order.size(); ++i) {
      if (same.matched_gt[i] >= 0) {
        gt_used[static_cast<std::size_t>(same.matched_gt[i])] = true;
        const int c = kept[same.order[i]].class_id;
        ++rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
      } else {
        left.push_back(same.order[i]);
      }
    }
    for (std::size_t k : left) {
      const Detection& d = kept[k];
      int best = -1;
      double best_iou = opt.iou_threshold;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gt_used[g]) continue;
        const double v = iou(d.box, gts[g].box);
        if (v > best_iou || (v == best_iou && best < 0)) best_iou = v, best = static_cast<int>(g);
      }
      const std::size_t row = best >= 0 ? static_cast<std::size_t>(gts[static_cast<std::size_t>(best)].class_id)
                                        : static_cast<std::size_t>(nc);
      if (best >= 0) gt_used[static_cast<std::size_t>(best)] = true;
      ++rep.confusion[row][static_cast<std::size_t>(d.class_id)];
    }
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (!gt_used[g]) ++rep.confusion[static_cast<std::size_t>(gts[g].class_id)][static_cast<std::size_t>(nc)];
  }

  double sum = 0;
  int counted = 0, total_gt = 0, total_tp = 0, total_det = 0;
  for (int c = 0; c < nc; ++c) {
    auto& cs = rep.classes[static_cast<std::size_t>(c)];
    auto& list = ranked[static_cast<std::size_t>(c)];
    std::stable_sort(list.begin(), list.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
    std::vector<bool> flags;
    for (const auto& r : list) flags.push_back(r.tp);
    cs.ap = average_precision(pr_curve(flags, cs.num_gt));
    cs.excluded = cs.num_gt == 0 && cs.num_det == 0;
    const int tp = tp_at[static_cast<std::size_t>(c)], det = det_at[static_cast<std::size_t>(c)];
    cs.precision = det > 0 ? static_cast<double>(tp) / det : 0.0;
    cs.recall = cs.num_gt > 0 ? static_cast<double>(tp) / cs.num_gt : 0.0;
    total_gt += cs.num_gt, total_tp += tp, total_det += det;
    if (!cs.excluded) sum += cs.ap, ++counted;
  }
  rep.map = counted > 0 ? sum / counted : 0.0;
  rep.precision = total_det > 0 ? static_cast<double>(total_tp) / total_det : 0.0;
  rep.recall = total_gt > 0 ? static_cast<double>(total_tp) / total_gt : 0.0;
  rep.detections_per_image = rep.images > 0 ? static_cast<double>(rep.detections) / rep.images : 0.0;
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["map50"] = map;
  j["iou_threshold"] = iou_threshold;
  j["conf_threshold"] = conf_threshold;
  j["precision"] = precision;
  j["recall"] = recall;
  j["confusion_matrix"] = confusion;
  j["images"] = images;
  j["detections"] = detections;
  j["detections_at_conf"] = detections_at_conf;
  j["detections_per_image"] = detections_per_image;
  auto& cls = j["classes"] = nlohmann::json::array();
  for (const auto& c : classes)
    cls.push_back({{"name", c.name},
                   {"ap50", c.ap},
                   {"num_gt", c.num_gt},
                   {"num_det", c.num_det},
                   {"excluded_from_map", c.excluded},
                   {"precision", c.precision},
                   {"recall", c.recall}});
  return j;
}

std::string EvalReport::to_text() const {
  std::ostringstream o;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s %8s %8s\n", "class", "gt", "det", "P", "R", "AP@0.5");
  o << line;
  for (const auto& c : classes) {
    std::snprintf(line, sizeof line, "%-12s %8d %8d %8.4f %8.4f %8.4f%s\n", c.name.c_str(), c.num_gt, c.num_det,
                  c.precision, c.recall, c.ap, c.excluded ? "  (no data, not in mAP)" : "");
    o << line;
  }
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8.4f %8.4f %8.4f\n", "all", "", "", precision, recall, map);
  o << line;
  std::snprintf(line, sizeof line, "P/R at conf >= %.4g, matching IoU >= %.2g; %d images, %.2f detections/image\n",
                conf_threshold, iou_threshold, images, detections_per_image);
  o << line << "confusion (rows truth, cols predicted, last = background)\n";
  for (const auto& row : confusion) {
    for (std::size_t i = 0; i < row.size(); ++i) o << (i ? " " : "") << row[i];
    o << '\n';
  }
  return o.str();
}

}  // namespace shcanet::eval
