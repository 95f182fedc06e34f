#pragma once

#include <vector>

#include <json.hpp>

#include "shcanet/nn/detector.hpp"

namespace shcanet::eval {

struct BenchOptions {
  int warmup = 10;
  int trials = 100;
  nn::PredictOptions predict;
};

struct BenchReport {
  int input_size = 0;
  int trials = 0;
  double mean_ms = 0;
  double median_ms = 0;
  double stddev_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
  std::size_t parameters = 0;
  std::vector<double> samples_ms;

  nlohmann::json to_json() const;
};

// Wall clock of one single-image predict (backbone, neck, head, decode, nms)
// on a mid-gray image at the model's input size.
template <typename T>
BenchReport bench(nn::Detector<T>& model, const BenchOptions& opt = {});

// mean, median, population stddev, min, max of `ms`
BenchReport summarize(std::vector<double> ms);

}  // namespace shcanet::eval
