#include "shcanet/data/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace shcanet::data {

Image::Image(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {
  require(w >= 0 && h >= 0, "image dimensions must be non-negative");
}

namespace {

struct HeaderReader {
  std::string_view s;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < s.size()) {
      if (std::isspace(static_cast<unsigned char>(s[pos]))) {
        ++pos;
      } else if (s[pos] == '#') {
        while (pos < s.size() && s[pos] != '\n' && s[pos] != '\r') ++pos;
      } else {
        break;
      }
    }
  }

  long number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos;
    long v = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      v = v * 10 + (s[pos] - '0');
      if (v > 1'000'000'000) throw PpmError(PpmError::Kind::bad_header, std::string("PPM ") + field + " is too large");
      ++pos;
    }
    if (pos == start) throw PpmError(PpmError::Kind::bad_header, std::string("PPM header: missing ") + field);
    return v;
  }
};

}  // namespace

Image decode_ppm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    const std::string got(bytes.substr(0, std::min<std::size_t>(2, bytes.size())));
    throw PpmError(PpmError::Kind::bad_magic, "not a binary PPM: expected magic 'P6', found '" + got + "'");
  }
  HeaderReader r{bytes, 2};
  const long w = r.number("width");
  const long h = r.number("height");
  const long maxval = r.number("maxval");
  if (w <= 0 || h <= 0) throw PpmError(PpmError::Kind::bad_header, "PPM has empty dimensions");
  if (maxval != 255)
    throw PpmError(PpmError::Kind::bad_maxval, "unsupported PPM maxval " + std::to_string(maxval) + " (only 255)");
  // exactly one whitespace byte separates the header from the raster
  if (r.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos])))
    throw PpmError(PpmError::Kind::truncated, "PPM ends before the pixel data");
  ++r.pos;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  const std::size_t have = bytes.size() - r.pos;
  if (have < need)
    throw PpmError(PpmError::Kind::truncated, "truncated PPM payload: expected " + std::to_string(need) +
                                                  " bytes, found " + std::to_string(have));
  Image img(static_cast<int>(w), static_cast<int>(h));
  std::copy_n(bytes.data() + r.pos, need, reinterpret_cast<char*>(img.pixels.data()));
  return img;
}

std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OperationalError("cannot open image " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_ppm(ss.str());
  } catch (const PpmError& e) {
    throw PpmError(e.kind(), path.string() + ": " + e.what());
  }
}

void save_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OperationalError("cannot write image " + path.string());
  const std::string bytes = encode_ppm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw OperationalError("write failed for " + path.string());
}

Image resize_nearest(const Image& src, int width, int height) {
  require(!src.empty(), "cannot resize an empty image");
  require(width > 0 && height > 0, "resize target must be positive");
  Image out(width, height);
  std::vector<int> sx(static_cast<std::size_t>(width));
  for (int x = 0; x < width; ++x)
    sx[static_cast<std::size_t>(x)] = static_cast<int>((2LL * x + 1) * src.width / (2LL * width));
  for (int y = 0; y < height; ++y) {
    const int syy = static_cast<int>((2LL * y + 1) * src.height / (2LL * height));
    for (int x = 0; x < width; ++x) std::copy_n(src.px(sx[static_cast<std::size_t>(x)], syy), 3, out.px(x, y));
  }
  return out;
}

void blit(Image& dst, const Image& src, int left, int top) {
  const int x0 = std::max(0, left), x1 = std::min(dst.width, left + src.width);
  const int y0 = std::max(0, top), y1 = std::min(dst.height, top + src.height);
  if (x0 >= x1) return;
  for (int y = y0; y < y1; ++y) std::copy_n(src.px(x0 - left, y - top), 3 * (x1 - x0), dst.px(x0, y));
}

void draw_box(Image& img, const Box& box, const std::array<std::uint8_t, 3>& color, int thickness) {
  if (img.empty()) return;
  const int x1 = std::clamp(static_cast<int>(std::floor(box.x1)), 0, img.width - 1);
  const int y1 = std::clamp(static_cast<int>(std::floor(box.y1)), 0, img.height - 1);
  const int x2 = std::clamp(static_cast<int>(std::ceil(box.x2)) - 1, 0, img.width - 1);
  const int y2 = std::clamp(static_cast<int>(std::ceil(box.y2)) - 1, 0, img.height - 1);
  for (int y = y1; y <= y2; ++y)
    for (int x = x1; x <= x2; ++x) {
      const bool edge = x - x1 < thickness || x2 - x < thickness || y - y1 < thickness || y2 - y < thickness;
      if (edge) std::copy(color.begin(), color.end(), img.px(x, y));
    }
}

template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& batch) {
  require(!batch.empty(), "empty image batch");
  const int h = batch[0]->height, w = batch[0]->width;
  Tensor<T> t(Shape{static_cast<int>(batch.size()), 3, h, w});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Image& img = *batch[n];
    require(img.width == w && img.height == h, "images in a batch must share a size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = static_cast<T>(img.px(x, y)[c] / 255.0);
  }
  return t;
}

template Tensor<float> to_tensor(const std::vector<const Image*>&);
template Tensor<double> to_tensor(const std::vector<const Image*>&);

}  // namespace shcanet::data
