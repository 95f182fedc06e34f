#pragma once

#include <cstdint>
#include <random>

#include "shcanet/tensor.hpp"

namespace shcanet::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

// Bitwise equality that treats +0 and -0 as equal.
template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a == b;
}

}  // namespace shcanet::testing
