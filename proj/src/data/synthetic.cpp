#include "shcanet/data/synthetic.hpp"

#include <fstream>

#include "shcanet/rng.hpp"

namespace shcanet::data {

std::array<std::uint8_t, 3> class_color(int class_id) {
  switch (class_id) {
    case 0: return {255, 0, 0};
    case 1: return {0, 255, 0};
    case 2: return {0, 0, 255};
    default: {
      const std::uint64_t h = mix64(static_cast<std::uint64_t>(class_id));
      return {static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8), static_cast<std::uint8_t>(h >> 16)};
    }
  }
}

std::vector<Sample> make_rectangles(const SyntheticConfig& cfg, std::uint64_t seed) {
  require(cfg.count > 0 && cfg.num_classes > 0 && cfg.max_objects > 0, "synthetic set needs images, classes, objects");
  require(cfg.min_side >= 1 && cfg.min_side <= cfg.max_side && cfg.max_side <= std::min(cfg.width, cfg.height),
          "synthetic object sides do not fit the image");
  std::vector<Sample> out;
  for (int i = 0; i < cfg.count; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    Sample s{Image(cfg.width, cfg.height, static_cast<std::uint8_t>(uniform_int(rng, 40, 90))), {},
             "synthetic_" + std::to_string(i)};
    const int want = static_cast<int>(uniform_int(rng, 1, cfg.max_objects));
    for (int tries = 0; tries < 200 && static_cast<int>(s.annotations.size()) < want; ++tries) {
      const int w = static_cast<int>(uniform_int(rng, cfg.min_side, cfg.max_side));
      const int h = static_cast<int>(uniform_int(rng, cfg.min_side, cfg.max_side));
      const int x = static_cast<int>(uniform_int(rng, 0, cfg.width - w));
      const int y = static_cast<int>(uniform_int(rng, 0, cfg.height - h));
      const Box b{double(x), double(y), double(x + w), double(y + h)};
      bool clear = true;
      for (const auto& a : s.annotations) clear = clear && intersection(a.box, b) == 0.0;
      if (!clear) continue;
      // cycle classes so every class shows up across a small set
      const int cls = (i + static_cast<int>(s.annotations.size())) % cfg.num_classes;
      const auto color = class_color(cls);
      for (int yy = y; yy < y + h; ++yy)
        for (int xx = x; xx < x + w; ++xx) std::copy(color.begin(), color.end(), s.image.px(xx, yy));
      s.annotations.push_back({cls, b});
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                                    const ClassList& classes, const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string base = stem + "_" + std::to_string(i);
    save_ppm(dir / (base + ".ppm"), samples[i].image);
    std::ofstream xml(dir / (base + ".xml"), std::ios::binary);
    if (!xml) throw OperationalError("cannot write " + (dir / (base + ".xml")).string());
    xml << format_voc_xml(base + ".ppm", samples[i].image.width, samples[i].image.height, samples[i].annotations,
                          classes);
    entries.push_back({base + ".ppm", base + ".xml"});
  }
  const auto manifest = dir / "manifest.tsv";
  write_manifest(manifest, entries);
  return manifest;
}

std::vector<WidthHeight> planted_boxes(const std::vector<WidthHeight>& centers, int per_cluster, double jitter,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<WidthHeight> out;
  for (const auto& c : centers)
    for (int i = 0; i < per_cluster; ++i)
      out.push_back({c[0] * uniform_real(rng, 1 - jitter, 1 + jitter), c[1] * uniform_real(rng, 1 - jitter, 1 + jitter)});
  return out;
}

}  // namespace shcanet::data
