#include "shcanet/nn/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace shcanet::nn {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <typename T>
std::vector<std::vector<Detection>> decode(const std::array<Tensor<T>, 3>& raw, const HeadConfig& cfg, double conf_threshold) {
  const int per = cfg.outputs_per_anchor();
  const int n = raw[0].shape().n();
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(n));
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor<T>& t = raw[l];
    require(t.shape().rank() == 4 && t.shape().c() == cfg.channels() && t.shape().n() == n,
            "decode: level " + std::to_string(l) + " has shape " + t.shape().str());
    const double stride = cfg.strides[l];
    for (int b = 0; b < n; ++b) {
      for (int a = 0; a < 3; ++a) {
        const auto& anchor = cfg.anchors[l][static_cast<std::size_t>(a)];
        for (int gy = 0; gy < t.shape().h(); ++gy) {
          for (int gx = 0; gx < t.shape().w(); ++gx) {
            auto logit = [&](int k) { return static_cast<double>(t.at(b, a * per + k, gy, gx)); };
            const double obj = sigmoid(logit(4));
            int best = 0;
            double best_cls = -1;
            for (int k = 0; k < cfg.num_classes; ++k) {
              const double p = sigmoid(logit(5 + k));
              if (p > best_cls) {
                best_cls = p;
                best = k;
              }
            }
            const double score = obj * best_cls;
            if (score < conf_threshold) continue;
            const double cx = (2 * sigmoid(logit(0)) - 0.5 + gx) * stride;
            const double cy = (2 * sigmoid(logit(1)) - 0.5 + gy) * stride;
            const double sw = 2 * sigmoid(logit(2)), sh = 2 * sigmoid(logit(3));
            out[static_cast<std::size_t>(b)].push_back(
                {best, score, Box::from_center(cx, cy, sw * sw * anchor[0], sh * sh * anchor[1])});
          }
        }
      }
    }
  }
  return out;
}

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
  if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
  return a.class_id < b.class_id;
}

std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold) {
  std::stable_sort(candidates.begin(), candidates.end(), ranks_before);
  std::map<int, std::vector<const Detection*>> kept_by_class;
  std::vector<Detection> out;
  for (const auto& c : candidates) {
    auto& kept = kept_by_class[c.class_id];
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection* k) { return iou(k->box, c.box) > iou_threshold; });
    if (suppressed) continue;
    kept.push_back(&c);
    out.push_back(c);
  }
  return out;
}

Detection unletterbox(const Detection& det, const LetterboxMeta& meta) {
  return {det.class_id, det.score, meta.inverse(det.box)};
}

template std::vector<std::vector<Detection>> decode(const std::array<Tensor<float>, 3>&, const HeadConfig&, double);
template std::vector<std::vector<Detection>> decode(const std::array<Tensor<double>, 3>&, const HeadConfig&, double);

}  // namespace shcanet::nn
