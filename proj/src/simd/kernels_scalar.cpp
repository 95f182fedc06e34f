#include "shcanet/simd/kernels.hpp"

namespace shcanet::simd {
namespace {

template <typename T>
void axpy(T* y, const T* x, T a, std::size_t n, std::size_t stride) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i * stride];
}

template <typename T>
void axpy_scatter(T* y, const T* x, T a, std::size_t n, std::size_t stride) {
  for (std::size_t i = 0; i < n; ++i) y[i * stride] += a * x[i];
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n, std::size_t stride) {
  T s[8] = {};
  const std::size_t body = n - n % 8;
  for (std::size_t i = 0; i < body; i += 8)
    for (std::size_t l = 0; l < 8; ++l) s[l] += a[i + l] * b[(i + l) * stride];
  for (std::size_t i = body; i < n; ++i) s[i - body] += a[i] * b[i * stride];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

template <typename T>
void add(T* y, const T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

template <typename T>
void mul(T* y, const T* a, const T* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void sgd(T* p, T* v, const T* g, T lr, T momentum, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

template <typename T>
constexpr Kernels<T> make() {
  return {Isa::scalar, &axpy<T>, &axpy_scatter<T>, &dot<T>, &add<T>, &mul<T>, &sgd<T>};
}

constexpr Kernels<float> kF32 = make<float>();
constexpr Kernels<double> kF64 = make<double>();

}  // namespace

template <>
const Kernels<float>& scalar_kernels<float>() {
  return kF32;
}
template <>
const Kernels<double>& scalar_kernels<double>() {
  return kF64;
}

}  // namespace shcanet::simd
