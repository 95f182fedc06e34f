#include "shcanet/data/augment.hpp"

#include <algorithm>
#include <cmath>

#include "shcanet/rng.hpp"

namespace shcanet::data {

namespace {

int resized_extent(int side, double scale, int out_size) {
  return std::clamp(static_cast<int>(std::lround(side * scale)), 1, out_size);
}

}  // namespace

LetterboxMeta letterbox_meta(int width, int height, int out_size) {
  require(width > 0 && height > 0, "letterbox of an empty image");
  require(out_size > 0, "letterbox size must be positive");
  LetterboxMeta m;
  m.out_size = out_size;
  m.src_width = width;
  m.src_height = height;
  m.scale = static_cast<double>(out_size) / std::max(width, height);
  const int rw = resized_extent(width, m.scale, out_size), rh = resized_extent(height, m.scale, out_size);
  m.pad_left = (out_size - rw) / 2;
  m.pad_top = (out_size - rh) / 2;
  return m;
}

Letterboxed letterbox(const Image& img, int out_size) {
  const LetterboxMeta m = letterbox_meta(img.width, img.height, out_size);
  const int rw = resized_extent(img.width, m.scale, out_size), rh = resized_extent(img.height, m.scale, out_size);
  Image canvas(out_size, out_size, kPadGray);
  if (rw == img.width && rh == img.height)
    blit(canvas, img, m.pad_left, m.pad_top);
  else
    blit(canvas, resize_nearest(img, rw, rh), m.pad_left, m.pad_top);
  return {std::move(canvas), m};
}

Sample letterbox(const Sample& s, int out_size) {
  auto lb = letterbox(s.image, out_size);
  Sample out{std::move(lb.image), {}, s.source};
  for (const auto& a : s.annotations) out.annotations.push_back({a.class_id, lb.meta.forward(a.box)});
  return out;
}

std::array<int, 2> mosaic_center(std::uint64_t seed, int out_size) {
  Rng rng(seed);
  const int xc = static_cast<int>(uniform_int(rng, out_size / 2, 3 * out_size / 2));
  const int yc = static_cast<int>(uniform_int(rng, out_size / 2, 3 * out_size / 2));
  return {xc, yc};
}

Sample mosaic(const std::vector<const Sample*>& samples, std::uint64_t seed, int out_size) {
  require(samples.size() == 4, "mosaic takes exactly 4 samples, got " + std::to_string(samples.size()));
  for (const Sample* s : samples) require(s != nullptr && !s->image.empty(), "mosaic needs four non-empty samples");
  const int s2 = 2 * out_size;
  const auto [xc, yc] = mosaic_center(seed, out_size);
  Image canvas(s2, s2, kPadGray);
  std::vector<Annotation> boxes;

  for (int i = 0; i < 4; ++i) {
    const Sample& src = *samples[static_cast<std::size_t>(i)];
    const double scale = static_cast<double>(out_size) / std::max(src.image.width, src.image.height);
    const int w = resized_extent(src.image.width, scale, out_size), h = resized_extent(src.image.height, scale, out_size);
    const Image img = (w == src.image.width && h == src.image.height) ? src.image : resize_nearest(src.image, w, h);

    // tile on the canvas (a) and the matching crop of the image (b)
    int x1a, y1a, x2a, y2a, x1b, y1b;
    switch (i) {
      case 0:  // top left
        x1a = std::max(xc - w, 0), y1a = std::max(yc - h, 0), x2a = xc, y2a = yc;
        x1b = w - (x2a - x1a), y1b = h - (y2a - y1a);
        break;
      case 1:  // top right
        x1a = xc, y1a = std::max(yc - h, 0), x2a = std::min(xc + w, s2), y2a = yc;
        x1b = 0, y1b = h - (y2a - y1a);
        break;
      case 2:  // bottom left
        x1a = std::max(xc - w, 0), y1a = yc, x2a = xc, y2a = std::min(s2, yc + h);
        x1b = w - (x2a - x1a), y1b = 0;
        break;
      default:  // bottom right
        x1a = xc, y1a = yc, x2a = std::min(xc + w, s2), y2a = std::min(s2, yc + h);
        x1b = 0, y1b = 0;
        break;
    }
    const int dx = x1a - x1b, dy = y1a - y1b;
    for (int y = y1a; y < y2a; ++y) std::copy_n(img.px(x1a - dx, y - dy), 3 * (x2a - x1a), canvas.px(x1a, y));

    for (const auto& a : src.annotations) {
      Box b{a.box.x1 * scale + dx, a.box.y1 * scale + dy, a.box.x2 * scale + dx, a.box.y2 * scale + dy};
      b.x1 = std::clamp(b.x1, double(x1a), double(x2a));
      b.x2 = std::clamp(b.x2, double(x1a), double(x2a));
      b.y1 = std::clamp(b.y1, double(y1a), double(y2a));
      b.y2 = std::clamp(b.y2, double(y1a), double(y2a));
      if (b.width() * b.height() < 4.0) continue;
      boxes.push_back({a.class_id, b});
    }
  }

  Sample out{Image(out_size, out_size), {}, "mosaic"};
  for (int y = 0; y < out_size; ++y)
    for (int x = 0; x < out_size; ++x) std::copy_n(canvas.px(2 * x, 2 * y), 3, out.image.px(x, y));
  for (auto& a : boxes) out.annotations.push_back({a.class_id, {a.box.x1 / 2, a.box.y1 / 2, a.box.x2 / 2, a.box.y2 / 2}});
  return out;
}

}  // namespace shcanet::data
