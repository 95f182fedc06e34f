#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "shcanet/data/dataset.hpp"
#include "shcanet/eval/metrics.hpp"
#include "shcanet/loss/loss.hpp"
#include "shcanet/nn/detector.hpp"
#include "shcanet/train/optim.hpp"

namespace shcanet::train {

using Model = nn::Detector<float>;

struct TrainOptions {
  OptimConfig optim;
  loss::LossGains gains;
  bool mosaic = true;
  std::size_t max_steps = 0;  // 0 runs every epoch to the end
  int eval_every = 1;         // epochs between evaluations; 0 disables
  nn::PredictOptions eval_predict{0.001, 0.6, 300};
  double operating_conf = 0.25;
  std::ostream* log = nullptr;  // step<TAB>lr<TAB>box<TAB>obj<TAB>cls<TAB>total
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0;
  loss::LossComponents parts;
};

struct EvalRecord {
  int epoch = 0;
  std::size_t step = 0;  // steps completed when evaluated
  double map = 0;
};

struct Snapshot {
  std::vector<Tensor<float>> params;
  std::vector<Tensor<float>> buffers;
};

Snapshot snapshot(const nn::ParamStore<float>& store);
void restore(nn::ParamStore<float>& store, const Snapshot& s);

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double best_map = -1;
  int best_epoch = -1;
  std::optional<Snapshot> best;  // parameters and buffers at best_epoch
};

class TrainingDiverged : public OperationalError {
 public:
  TrainingDiverged(std::size_t step, const std::string& what) : OperationalError(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Called after each evaluation that improves on the best mAP so far.
using BestCallback = std::function<void(const EvalRecord&, const Model&)>;

// Seeded SGD training. Each epoch shuffles the samples; each slot of a batch
// is either a mosaic of its sample and three seeded partners or the plain
// letterboxed sample. Evaluation runs on `val` (original image coordinates).
TrainResult train(Model& model, const std::vector<data::Sample>& train_set, const std::vector<data::Sample>& val,
                  const std::vector<std::string>& class_names, const TrainOptions& opt, std::uint64_t seed,
                  const BestCallback& on_best = {});

// Predictions mapped back to each sample's pixels, one list per sample.
std::vector<std::vector<Detection>> detect_samples(Model& model, const std::vector<data::Sample>& samples,
                                                   const nn::PredictOptions& opt, int batch = 8);

eval::EvalReport evaluate_model(Model& model, const std::vector<data::Sample>& samples,
                                const std::vector<std::string>& class_names, const nn::PredictOptions& opt,
                                double operating_conf);

std::string format_log_line(const StepRecord& r);

}  // namespace shcanet::train
