#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shcanet/error.hpp"
#include "shcanet/geometry.hpp"
#include "shcanet/tensor.hpp"

namespace shcanet::data {

// 8-bit RGB, row-major, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0);

  std::uint8_t* px(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* px(int x, int y) const { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  bool empty() const { return width == 0 || height == 0; }
  bool operator==(const Image&) const = default;
};

class PpmError : public InvalidInput {
 public:
  enum class Kind { bad_magic, bad_header, bad_maxval, truncated };
  PpmError(Kind kind, const std::string& what) : InvalidInput(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

Image decode_ppm(std::string_view bytes);
std::string encode_ppm(const Image& img);
Image load_ppm(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const Image& img);

// Nearest neighbour: destination pixel x samples source floor((x + 0.5) * W / W').
Image resize_nearest(const Image& src, int width, int height);

// Copy of `src` placed at (left, top) on `dst`; parts outside dst are dropped.
void blit(Image& dst, const Image& src, int left, int top);

// Rectangle outline `thickness` pixels wide, drawn inside the box and clipped to the image.
void draw_box(Image& img, const Box& box, const std::array<std::uint8_t, 3>& color, int thickness = 2);

// N x 3 x H x W tensor scaled to [0, 1].
template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& batch);

}  // namespace shcanet::data
