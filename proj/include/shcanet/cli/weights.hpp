#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "shcanet/nn/detector.hpp"

namespace shcanet::cli {

// Layout: "SHCANET1", u32 LE metadata length, UTF-8 JSON metadata, f32 LE payload.
// Metadata: {"format_version", "config_hash", "tensors": [{"name", "kind",
// "shape", "offset", "bytes", "fnv1a"}]} with parameters first, then buffers,
// at contiguous ascending offsets from the start of the payload.
inline constexpr char kWeightsMagic[9] = "SHCANET1";
inline constexpr int kWeightsVersion = 1;

class WeightsError : public InvalidInput {
 public:
  enum class Kind { bad_magic, bad_metadata, hash_mismatch, shape_mismatch, truncated, checksum_mismatch };
  WeightsError(Kind kind, const std::string& what) : InvalidInput(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string encode_weights(const nn::Detector<float>& model);
void save_weights(const nn::Detector<float>& model, const std::filesystem::path& path);

struct LoadOptions {
  bool ignore_hash = false;  // accept weights written for a different config when every shape fits
  bool verify = false;       // recompute per-tensor checksums
};

// Overwrites every parameter and buffer of `model`. Checks run in this order:
// magic, metadata, payload length, names and shapes, config hash, checksums.
void decode_weights(std::string_view bytes, nn::Detector<float>& model, const LoadOptions& opt = {});
void load_weights(const std::filesystem::path& path, nn::Detector<float>& model, const LoadOptions& opt = {});

std::string fnv1a_hex(std::string_view bytes);

}  // namespace shcanet::cli
