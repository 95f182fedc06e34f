// AArch64 variant. Multiplies and adds are issued separately (never vfmaq) so
// lanes round exactly like the scalar reference.

#include <arm_neon.h>

#include "shcanet/simd/kernels.hpp"

namespace shcanet::simd {
namespace {

void axpy_f32(float* y, const float* x, float a, std::size_t n, std::size_t stride) {
  if (stride != 1) return scalar_kernels<float>().axpy(y, x, a, n, stride);
  const float32x4_t va = vdupq_n_f32(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vmulq_f32(va, vld1q_f32(x + i))));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_f64(double* y, const double* x, double a, std::size_t n, std::size_t stride) {
  if (stride != 1) return scalar_kernels<double>().axpy(y, x, a, n, stride);
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_scatter_f32(float* y, const float* x, float a, std::size_t n, std::size_t stride) {
  if (stride == 1) return axpy_f32(y, x, a, n, 1);
  scalar_kernels<float>().axpy_scatter(y, x, a, n, stride);
}

void axpy_scatter_f64(double* y, const double* x, double a, std::size_t n, std::size_t stride) {
  if (stride == 1) return axpy_f64(y, x, a, n, 1);
  scalar_kernels<double>().axpy_scatter(y, x, a, n, stride);
}

float dot_f32(const float* a, const float* b, std::size_t n, std::size_t stride) {
  if (stride != 1) return scalar_kernels<float>().dot(a, b, n, stride);
  const std::size_t full = n - n % 8;
  float32x4_t lo = vdupq_n_f32(0.0f);
  float32x4_t hi = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i < full; i += 8) {
    lo = vaddq_f32(lo, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    hi = vaddq_f32(hi, vmulq_f32(vld1q_f32(a + i + 4), vld1q_f32(b + i + 4)));
  }
  float s[8];
  vst1q_f32(s, lo);
  vst1q_f32(s + 4, hi);
  for (; i < n; ++i) s[i - full] += a[i] * b[i];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

double dot_f64(const double* a, const double* b, std::size_t n, std::size_t stride) {
  if (stride != 1) return scalar_kernels<double>().dot(a, b, n, stride);
  const std::size_t full = n - n % 8;
  float64x2_t acc[4] = {vdupq_n_f64(0.0), vdupq_n_f64(0.0), vdupq_n_f64(0.0), vdupq_n_f64(0.0)};
  std::size_t i = 0;
  for (; i < full; i += 8)
    for (int q = 0; q < 4; ++q) acc[q] = vaddq_f64(acc[q], vmulq_f64(vld1q_f64(a + i + 2 * q), vld1q_f64(b + i + 2 * q)));
  double s[8];
  for (int q = 0; q < 4; ++q) vst1q_f64(s + 2 * q, acc[q]);
  for (; i < n; ++i) s[i - full] += a[i] * b[i];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

void add_f32(float* y, const float* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void add_f64(double* y, const double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void mul_f32(float* y, const float* a, const float* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void mul_f64(double* y, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void sgd_f32(float* p, float* v, const float* g, float lr, float momentum, std::size_t n) {
  const float32x4_t vl = vdupq_n_f32(lr);
  const float32x4_t vm = vdupq_n_f32(momentum);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t nv = vaddq_f32(vmulq_f32(vm, vld1q_f32(v + i)), vld1q_f32(g + i));
    vst1q_f32(v + i, nv);
    vst1q_f32(p + i, vsubq_f32(vld1q_f32(p + i), vmulq_f32(vl, nv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void sgd_f64(double* p, double* v, const double* g, double lr, double momentum, std::size_t n) {
  const float64x2_t vl = vdupq_n_f64(lr);
  const float64x2_t vm = vdupq_n_f64(momentum);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t nv = vaddq_f64(vmulq_f64(vm, vld1q_f64(v + i)), vld1q_f64(g + i));
    vst1q_f64(v + i, nv);
    vst1q_f64(p + i, vsubq_f64(vld1q_f64(p + i), vmulq_f64(vl, nv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

constexpr Kernels<float> kF32{Isa::neon, &axpy_f32, &axpy_scatter_f32, &dot_f32, &add_f32, &mul_f32, &sgd_f32};
constexpr Kernels<double> kF64{Isa::neon, &axpy_f64, &axpy_scatter_f64, &dot_f64, &add_f64, &mul_f64, &sgd_f64};

}  // namespace

template <>
const Kernels<float>* neon_kernels<float>() {
  return &kF32;
}
template <>
const Kernels<double>* neon_kernels<double>() {
  return &kF64;
}

}  // namespace shcanet::simd
