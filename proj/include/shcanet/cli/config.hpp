#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "shcanet/loss/loss.hpp"
#include "shcanet/nn/detector.hpp"
#include "shcanet/train/optim.hpp"

namespace shcanet::cli {

// Everything a run depends on. Serialized as JSON with sorted keys; missing
// keys take the defaults below, unknown keys are rejected.
struct RunConfig {
  nn::ModelConfig model;  // model.input_size defaults to 640
  loss::LossGains gains;
  train::OptimConfig optim;
  std::vector<std::string> class_names{"face", "mask"};
  std::vector<std::string> ignore_labels;
  std::string train_data;  // manifest or annotation JSONL; relative to the config file
  std::string val_data;    // empty: evaluate on the training set
  std::uint64_t seed = 0;

  bool mosaic = true;
  std::size_t max_steps = 0;
  int eval_every = 1;
  double eval_conf = 0.001;     // candidate floor for AP
  double eval_iou = 0.6;        // NMS IoU during evaluation
  double operating_conf = 0.25;  // precision / recall / confusion threshold
  double detect_conf = 0.25;
  double detect_iou = 0.45;

  // class-name count equals nc; the model toggles form one ablation row
  void validate() const;
};

enum class BackboneRow { shufflecanet, shufflenetv2 };
enum class NeckRow { bifpn, panet_sum };
enum class LossRow { alpha_ciou, ciou };

struct AblationRow {
  BackboneRow backbone = BackboneRow::shufflecanet;
  NeckRow neck = NeckRow::bifpn;
  LossRow loss = LossRow::alpha_ciou;
  bool operator==(const AblationRow&) const = default;
};

// Row of the eight-way ablation grid a config belongs to.
AblationRow ablation_row(const RunConfig& cfg);
// Applies a row: attention on/off, fusion + skip edges, alpha 3 or 1.
void apply_row(RunConfig& cfg, const AblationRow& row);
std::string row_name(const AblationRow& row);
std::vector<AblationRow> all_rows();

nlohmann::json to_json(const RunConfig& cfg);
// `base` resolves relative data paths; pass an empty path to keep them as written.
// An optional "ablation" object {"backbone", "neck", "loss"} is applied after the
// explicit fields and must not contradict them.
RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});

std::string dump(const RunConfig& cfg);  // sorted keys, two-space indent, trailing newline
RunConfig load_config(const std::filesystem::path& path);

// Hex FNV-1a of the serialized model section (architecture, anchors, input size).
std::string model_hash(const nn::ModelConfig& model);

nlohmann::json model_to_json(const nn::ModelConfig& m);

}  // namespace shcanet::cli
