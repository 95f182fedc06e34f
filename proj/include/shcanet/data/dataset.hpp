#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shcanet/data/image.hpp"
#include "shcanet/geometry.hpp"

namespace shcanet::data {

struct ClassList {
  std::vector<std::string> names;
  std::vector<std::string> ignore;  // labels skipped silently instead of rejected

  int size() const { return static_cast<int>(names.size()); }
  // class id of `label`, -1 when ignored; throws InvalidInput naming the label otherwise
  int lookup(const std::string& label) const;
};

struct Sample {
  Image image;
  std::vector<Annotation> annotations;  // corner boxes, 0-based pixels
  std::string source;

  // boxes inside the image, class ids below nc
  void validate(int num_classes) const;
};

// VOC-style <annotation><object><name/><bndbox><xmin/>...</bndbox></object></annotation>.
// 1-based inclusive coordinates become 0-based corners by subtracting one.
std::vector<Annotation> parse_voc_xml(std::string_view text, const ClassList& classes);

// One object per line: {"image": path, "class": name or id, "x1", "y1", "x2", "y2"} in
// 0-based pixels. Blank lines are skipped.
struct JsonlRecord {
  std::string image;
  Annotation annotation;
};
std::vector<JsonlRecord> parse_annotation_jsonl(std::string_view text, const ClassList& classes);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path annotation;
};

// `image<TAB>annotation` per line, relative paths against `base`; '#' lines and blank lines skipped.
std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::filesystem::path& base);

// A manifest, or a JSONL annotation file whose records are grouped by image in
// first-appearance order. Annotations ending in .xml are VOC, .jsonl are JSONL
// (only records naming the entry's image are kept).
std::vector<Sample> load_dataset(const std::filesystem::path& path, const ClassList& classes);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// VOC document for `anns` in the 1-based convention read by parse_voc_xml.
std::string format_voc_xml(const std::string& filename, int width, int height, const std::vector<Annotation>& anns,
                           const ClassList& classes);

std::string read_text(const std::filesystem::path& path);

}  // namespace shcanet::data
