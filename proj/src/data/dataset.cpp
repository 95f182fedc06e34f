#include "shcanet/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

namespace shcanet::data {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

int ClassList::lookup(const std::string& label) const {
  const auto it = std::find(names.begin(), names.end(), label);
  if (it != names.end()) return static_cast<int>(it - names.begin());
  if (std::find(ignore.begin(), ignore.end(), label) != ignore.end()) return -1;
  fail_input("unknown class label '" + label + "'");
}

void Sample::validate(int num_classes) const {
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    const std::string where = source + " object " + std::to_string(i);
    require(a.class_id >= 0 && a.class_id < num_classes, where + ": class id " + std::to_string(a.class_id) +
                                                             " outside [0, " + std::to_string(num_classes) + ")");
    require(a.box.valid(), where + ": empty box");
    require(a.box.x1 >= 0 && a.box.y1 >= 0 && a.box.x2 <= image.width && a.box.y2 <= image.height,
            where + ": box exceeds the " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                " image");
  }
}

std::vector<Annotation> parse_voc_xml(std::string_view text, const ClassList& classes) {
  pt::ptree doc;
  std::istringstream in{std::string(text)};
  try {
    pt::read_xml(in, doc);
  } catch (const pt::xml_parser_error& e) {
    fail_input(std::string("malformed annotation XML: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  const auto root = doc.get_child_optional("annotation");
  require(root.has_value(), "annotation XML lacks an <annotation> root");
  std::vector<Annotation> out;
  int index = 0;
  for (const auto& [tag, obj] : *root) {
    if (tag != "object") continue;
    const std::string where = "object " + std::to_string(index++);
    const auto name = obj.get_optional<std::string>("name");
    require(name.has_value(), where + " has no <name>");
    auto coord = [&](const char* field) {
      const auto v = obj.get_optional<std::string>(std::string("bndbox.") + field);
      require(v.has_value(), where + " ('" + *name + "') lacks bndbox/" + field);
      try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        require(used > 0 && std::isfinite(d), "");
        return d;
      } catch (const std::exception&) {
        fail_input(where + ": bndbox/" + field + " is not a number: '" + *v + "'");
      }
    };
    const double xmin = coord("xmin"), ymin = coord("ymin"), xmax = coord("xmax"), ymax = coord("ymax");
    require(xmin < xmax, where + " ('" + *name + "'): xmin >= xmax");
    require(ymin < ymax, where + " ('" + *name + "'): ymin >= ymax");
    const int cls = classes.lookup(*name);
    if (cls < 0) continue;
    out.push_back({cls, {xmin - 1, ymin - 1, xmax - 1, ymax - 1}});
  }
  return out;
}

std::vector<JsonlRecord> parse_annotation_jsonl(std::string_view text, const ClassList& classes) {
  std::vector<JsonlRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "annotation line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail_input(where + ": " + e.what());
    }
    require(j.is_object(), where + ": expected a JSON object");
    for (const char* f : {"image", "class", "x1", "y1", "x2", "y2"}) require(j.contains(f), where + ": missing '" + f + "'");
    require(j["image"].is_string(), where + ": 'image' must be a string");
    int cls = 0;
    if (j["class"].is_string()) {
      cls = classes.lookup(j["class"].get<std::string>());
      if (cls < 0) continue;
    } else if (j["class"].is_number_integer()) {
      cls = j["class"].get<int>();
      require(cls >= 0 && cls < classes.size(), where + ": class id " + std::to_string(cls) + " out of range");
    } else {
      fail_input(where + ": 'class' must be a name or an integer id");
    }
    for (const char* f : {"x1", "y1", "x2", "y2"}) require(j[f].is_number(), where + ": '" + f + "' must be a number");
    const Box b{j["x1"].get<double>(), j["y1"].get<double>(), j["x2"].get<double>(), j["y2"].get<double>()};
    require(b.x1 < b.x2 && b.y1 < b.y2, where + ": x1 >= x2 or y1 >= y2");
    out.push_back({j["image"].get<std::string>(), {cls, b}});
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view text, const fs::path& base) {
  std::vector<ManifestEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos && line.find('\t', tab + 1) == std::string::npos,
            "manifest line " + std::to_string(lineno) + ": expected 'image<TAB>annotation'");
    fs::path img = line.substr(0, tab), ann = line.substr(tab + 1);
    require(!img.empty() && !ann.empty(), "manifest line " + std::to_string(lineno) + ": empty path");
    if (img.is_relative()) img = base / img;
    if (ann.is_relative()) ann = base / ann;
    out.push_back({img.lexically_normal(), ann.lexically_normal()});
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OperationalError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

Sample finish(Image img, std::vector<Annotation> anns, const fs::path& source, const ClassList& classes) {
  Sample s{std::move(img), std::move(anns), source.string()};
  s.validate(classes.size());
  return s;
}

template <typename F>
auto with_path(const fs::path& p, F f) {
  try {
    return f();
  } catch (const InvalidInput& e) {
    throw InvalidInput(p.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& path, const ClassList& classes) {
  std::vector<Sample> out;
  if (path.extension() == ".jsonl") {
    const auto records = with_path(path, [&] { return parse_annotation_jsonl(read_text(path), classes); });
    std::vector<std::string> order;
    std::map<std::string, std::vector<Annotation>> by_image;
    for (const auto& r : records) {
      if (!by_image.count(r.image)) order.push_back(r.image);
      by_image[r.image].push_back(r.annotation);
    }
    for (const auto& name : order) {
      fs::path img = name;
      if (img.is_relative()) img = path.parent_path() / img;
      out.push_back(finish(load_ppm(img), by_image[name], img, classes));
    }
    return out;
  }

  const auto entries = with_path(path, [&] { return parse_manifest(read_text(path), path.parent_path()); });
  std::map<fs::path, std::vector<JsonlRecord>> jsonl_cache;
  for (const auto& e : entries) {
    std::vector<Annotation> anns;
    if (e.annotation.extension() == ".jsonl") {
      auto it = jsonl_cache.find(e.annotation);
      if (it == jsonl_cache.end())
        it = jsonl_cache
                 .emplace(e.annotation, with_path(e.annotation,
                                                  [&] { return parse_annotation_jsonl(read_text(e.annotation), classes); }))
                 .first;
      for (const auto& r : it->second) {
        fs::path rp = r.image;
        if (rp.is_relative()) rp = e.annotation.parent_path() / rp;
        if (rp.lexically_normal() == e.image || fs::path(r.image).filename() == e.image.filename())
          anns.push_back(r.annotation);
      }
    } else {
      anns = with_path(e.annotation, [&] { return parse_voc_xml(read_text(e.annotation), classes); });
    }
    out.push_back(finish(load_ppm(e.image), std::move(anns), e.image, classes));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OperationalError("cannot write " + path.string());
  for (const auto& e : entries) out << e.image.generic_string() << '\t' << e.annotation.generic_string() << '\n';
}

std::string format_voc_xml(const std::string& filename, int width, int height, const std::vector<Annotation>& anns,
                           const ClassList& classes) {
  std::ostringstream o;
  o.precision(17);
  o << "<annotation>\n  <filename>" << filename << "</filename>\n  <size><width>" << width << "</width><height>"
    << height << "</height><depth>3</depth></size>\n";
  for (const auto& a : anns) {
    require(a.class_id >= 0 && a.class_id < classes.size(), "class id out of range");
    o << "  <object>\n    <name>" << classes.names[static_cast<std::size_t>(a.class_id)]
      << "</name>\n    <bndbox><xmin>" << a.box.x1 + 1 << "</xmin><ymin>" << a.box.y1 + 1 << "</ymin><xmax>"
      << a.box.x2 + 1 << "</xmax><ymax>" << a.box.y2 + 1 << "</ymax></bndbox>\n  </object>\n";
  }
  o << "</annotation>\n";
  return o.str();
}

}  // namespace shcanet::data
