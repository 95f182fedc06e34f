#include "shcanet/cli/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "shcanet/cli/config.hpp"
#include "shcanet/data/dataset.hpp"

namespace shcanet::cli {

using nlohmann::json;
using Kind = WeightsError::Kind;

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

struct Entry {
  std::string name;
  const char* kind;
  const Tensor<float>* value;
};

std::vector<Entry> entries(const nn::ParamStore<float>& store) {
  std::vector<Entry> out;
  for (const auto& p : store.params()) out.push_back({p.name, "param", &p.value});
  for (const auto& b : store.buffers()) out.push_back({b.name, "buffer", &b.value});
  return out;
}

void put_f32(std::string& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

float get_f32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

std::vector<int> dims(const Shape& s) {
  std::vector<int> d;
  for (int i = 0; i < s.rank(); ++i) d.push_back(s[i]);
  return d;
}

}  // namespace

std::string encode_weights(const nn::Detector<float>& model) {
  std::string payload;
  json records = json::array();
  for (const auto& e : entries(model.store())) {
    const std::size_t offset = payload.size();
    for (float v : e.value->data()) put_f32(payload, v);
    const std::size_t bytes = payload.size() - offset;
    records.push_back({{"name", e.name},
                       {"kind", e.kind},
                       {"shape", dims(e.value->shape())},
                       {"offset", offset},
                       {"bytes", bytes},
                       {"fnv1a", fnv1a_hex(std::string_view(payload).substr(offset, bytes))}});
  }
  const json meta{{"format_version", kWeightsVersion}, {"config_hash", model_hash(model.config())}, {"tensors", records}};
  const std::string text = meta.dump();
  std::string out(kWeightsMagic, 8);
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  out += text;
  out += payload;
  return out;
}

void save_weights(const nn::Detector<float>& model, const std::filesystem::path& path) {
  const std::string bytes = encode_weights(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw OperationalError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw OperationalError("write failed for " + path.string());
}

void decode_weights(std::string_view bytes, nn::Detector<float>& model, const LoadOptions& opt) {
  if (bytes.size() < 8 || bytes.substr(0, 8) != std::string_view(kWeightsMagic, 8))
    throw WeightsError(Kind::bad_magic, "not a weights file (missing SHCANET1 magic)");
  if (bytes.size() < 12) throw WeightsError(Kind::truncated, "weights file truncated inside the header");
  std::uint32_t meta_len = 0;
  for (int i = 0; i < 4; ++i) meta_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (bytes.size() - 12 < meta_len) throw WeightsError(Kind::truncated, "weights file truncated inside the metadata");
  json meta;
  try {
    meta = json::parse(bytes.substr(12, meta_len));
  } catch (const json::parse_error& e) {
    throw WeightsError(Kind::bad_metadata, std::string("weights metadata is not JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(12 + meta_len);

  struct Record {
    std::string name, kind, fnv;
    std::vector<int> shape;
    std::size_t offset = 0, size = 0;
  };
  std::vector<Record> records;
  std::string stored_hash;
  try {
    if (meta.at("format_version").get<int>() != kWeightsVersion)
      throw WeightsError(Kind::bad_metadata, "unsupported weights format version " + meta.at("format_version").dump());
    stored_hash = meta.at("config_hash").get<std::string>();
    std::size_t expect_offset = 0;
    for (const auto& t : meta.at("tensors")) {
      Record r{t.at("name").get<std::string>(), t.at("kind").get<std::string>(), t.at("fnv1a").get<std::string>(),
               t.at("shape").get<std::vector<int>>(), t.at("offset").get<std::size_t>(), t.at("bytes").get<std::size_t>()};
      if (r.offset != expect_offset)
        throw WeightsError(Kind::bad_metadata, "tensor " + r.name + " is not contiguous with the previous one");
      std::size_t count = 1;
      for (int d : r.shape) {
        if (d <= 0) throw WeightsError(Kind::bad_metadata, "tensor " + r.name + " has a non-positive dimension");
        count *= static_cast<std::size_t>(d);
      }
      if (r.size != 4 * count) throw WeightsError(Kind::bad_metadata, "tensor " + r.name + " byte count disagrees with its shape");
      expect_offset += r.size;
      records.push_back(std::move(r));
    }
    if (payload.size() < expect_offset)
      throw WeightsError(Kind::truncated, "weights payload truncated: " + std::to_string(payload.size()) + " of " +
                                              std::to_string(expect_offset) + " bytes");
    if (payload.size() > expect_offset)
      throw WeightsError(Kind::bad_metadata, "weights payload has " + std::to_string(payload.size() - expect_offset) +
                                                 " trailing bytes");
  } catch (const json::exception& e) {
    throw WeightsError(Kind::bad_metadata, std::string("weights metadata malformed: ") + e.what());
  }

  auto& store = model.store();
  std::vector<Tensor<float>*> targets;
  for (auto& p : store.params()) targets.push_back(&p.value);
  for (auto& b : store.buffers()) targets.push_back(&b.value);
  const auto expected = entries(store);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = expected[i];
    const auto it = std::find_if(records.begin(), records.end(), [&](const Record& r) { return r.name == e.name; });
    if (it == records.end()) throw WeightsError(Kind::shape_mismatch, "weights file has no tensor " + e.name);
    const std::vector<int> want = dims(e.value->shape());
    if (it->shape != want || it->kind != e.kind) {
      auto str = [](const std::vector<int>& s) {
        std::string o = "(";
        for (std::size_t k = 0; k < s.size(); ++k) o += (k ? ", " : "") + std::to_string(s[k]);
        return o + ")";
      };
      throw WeightsError(Kind::shape_mismatch, "tensor " + e.name + ": file has " + it->kind + " " + str(it->shape) +
                                                   ", model expects " + e.kind + " " + str(want));
    }
    if (it - records.begin() != static_cast<std::ptrdiff_t>(i))
      throw WeightsError(Kind::shape_mismatch, "tensor " + e.name + " is out of order in the weights file");
  }
  if (records.size() != expected.size())
    throw WeightsError(Kind::shape_mismatch, "weights file holds " + std::to_string(records.size()) +
                                                 " tensors, model has " + std::to_string(expected.size()));

  const std::string hash = model_hash(model.config());
  if (!opt.ignore_hash && stored_hash != hash)
    throw WeightsError(Kind::hash_mismatch,
                       "weights were written for config hash " + stored_hash + ", this config hashes to " + hash);
  if (opt.verify)
    for (const auto& r : records)
      if (fnv1a_hex(payload.substr(r.offset, r.size)) != r.fnv)
        throw WeightsError(Kind::checksum_mismatch, "checksum mismatch in tensor " + r.name);

  for (std::size_t i = 0; i < records.size(); ++i) {
    const char* p = payload.data() + records[i].offset;
    for (auto& v : targets[i]->data()) {
      v = get_f32(p);
      p += 4;
    }
  }
}

void load_weights(const std::filesystem::path& path, nn::Detector<float>& model, const LoadOptions& opt) {
  const std::string bytes = data::read_text(path);
  try {
    decode_weights(bytes, model, opt);
  } catch (const WeightsError& e) {
    throw WeightsError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace shcanet::cli
