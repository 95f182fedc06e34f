#include "shcanet/eval/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace shcanet::eval {

BenchReport summarize(std::vector<double> ms) {
  BenchReport r;
  r.trials = static_cast<int>(ms.size());
  r.samples_ms = ms;
  if (ms.empty()) return r;
  const double n = static_cast<double>(ms.size());
  r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / n;
  double var = 0;
  for (double v : ms) var += (v - r.mean_ms) * (v - r.mean_ms);
  r.stddev_ms = std::sqrt(var / n);
  std::sort(ms.begin(), ms.end());
  const std::size_t mid = ms.size() / 2;
  r.median_ms = ms.size() % 2 ? ms[mid] : (ms[mid - 1] + ms[mid]) / 2;
  r.min_ms = ms.front();
  r.max_ms = ms.back();
  return r;
}

template <typename T>
BenchReport bench(nn::Detector<T>& model, const BenchOptions& opt) {
  require(opt.warmup >= 0 && opt.trials > 0, "bench needs a positive trial count");
  const int s = model.config().input_size;
  Tensor<T> image(Shape{1, 3, s, s});
  image.fill(static_cast<T>(114.0 / 255.0));
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < opt.warmup; ++i) nn::predict(model, image, opt.predict);
  std::vector<double> ms;
  for (int i = 0; i < opt.trials; ++i) {
    const auto t0 = clock::now();
    const auto dets = nn::predict(model, image, opt.predict);
    const auto t1 = clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  BenchReport r = summarize(std::move(ms));
  r.input_size = s;
  r.parameters = model.count_parameters();
  return r;
}

nlohmann::json BenchReport::to_json() const {
  return {{"input_size", input_size}, {"trials", trials},       {"mean_ms", mean_ms},   {"median_ms", median_ms},
          {"stddev_ms", stddev_ms},   {"min_ms", min_ms},       {"max_ms", max_ms},     {"parameters", parameters}};
}

template BenchReport bench(nn::Detector<float>&, const BenchOptions&);
template BenchReport bench(nn::Detector<double>&, const BenchOptions&);

}  // namespace shcanet::eval
