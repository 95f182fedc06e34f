#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "shcanet/data/dataset.hpp"

namespace shcanet::data {

inline constexpr std::uint8_t kPadGray = 114;

// scale = out/max(W,H); resized to (round(W*scale), round(H*scale)) by nearest
// neighbour; centered with floor(residual/2) padding on the left and top.
LetterboxMeta letterbox_meta(int width, int height, int out_size = 640);

struct Letterboxed {
  Image image;
  LetterboxMeta meta;
};
Letterboxed letterbox(const Image& img, int out_size = 640);

// Image and boxes mapped together.
Sample letterbox(const Sample& s, int out_size = 640);

// Four samples spliced around a random center on a 2*out canvas, then halved to out x out.
// Boxes clipped to each tile and dropped when under 4 px^2 on the canvas.
Sample mosaic(const std::vector<const Sample*>& samples, std::uint64_t seed, int out_size = 640);

// Center point the mosaic with this seed uses, in canvas pixels (before halving).
std::array<int, 2> mosaic_center(std::uint64_t seed, int out_size);

}  // namespace shcanet::data
