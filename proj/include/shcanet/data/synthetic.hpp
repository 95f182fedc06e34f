#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "shcanet/data/anchors.hpp"
#include "shcanet/data/dataset.hpp"

namespace shcanet::data {

// Solid rectangles on a flat background, one fill color per class, no two
// objects overlapping. Used for overfit tests and the selfcheck.
struct SyntheticConfig {
  int count = 8;
  int width = 64;
  int height = 64;
  int num_classes = 2;
  int max_objects = 2;
  int min_side = 12;
  int max_side = 36;
};

std::vector<Sample> make_rectangles(const SyntheticConfig& cfg, std::uint64_t seed);

// Fill color of class c: red, green, blue, then a fixed hash.
std::array<std::uint8_t, 3> class_color(int class_id);

// Writes <dir>/<stem>_<i>.ppm and .xml plus <dir>/manifest.tsv; returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                                    const ClassList& classes, const std::string& stem = "img");

// `per_cluster` boxes around each planted (w, h), multiplicative jitter uniform in [1 - jitter, 1 + jitter].
std::vector<WidthHeight> planted_boxes(const std::vector<WidthHeight>& centers, int per_cluster, double jitter,
                                       std::uint64_t seed);

}  // namespace shcanet::data
