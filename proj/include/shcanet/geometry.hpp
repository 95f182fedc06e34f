#pragma once

#include <algorithm>

namespace shcanet {

// Corner-form box in pixels.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return (x1 + x2) / 2; }
  double cy() const { return (y1 + y2) / 2; }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool operator==(const Box&) const = default;
};

inline double intersection(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return w > 0 && h > 0 ? w * h : 0.0;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct Detection {
  int class_id = 0;
  double score = 0;
  Box box;
  bool operator==(const Detection&) const = default;
};

struct Annotation {
  int class_id = 0;
  Box box;
  bool operator==(const Annotation&) const = default;
};

// Maps original-image pixels into the square network input: p' = p*scale + pad.
struct LetterboxMeta {
  double scale = 1.0;
  int pad_left = 0, pad_top = 0;
  int out_size = 640;
  int src_width = 0, src_height = 0;

  Box forward(const Box& b) const {
    return {b.x1 * scale + pad_left, b.y1 * scale + pad_top, b.x2 * scale + pad_left, b.y2 * scale + pad_top};
  }
  // Inverse mapping, clamped to the source image.
  Box inverse(const Box& b) const {
    auto cx = [&](double x) { return std::clamp((x - pad_left) / scale, 0.0, static_cast<double>(src_width)); };
    auto cy = [&](double y) { return std::clamp((y - pad_top) / scale, 0.0, static_cast<double>(src_height)); };
    return {cx(b.x1), cy(b.y1), cx(b.x2), cy(b.y2)};
  }
};

}  // namespace shcanet
