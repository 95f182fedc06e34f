// Compiled with -mavx2 (and without -mfma): multiplies and adds stay separate
// instructions so every lane rounds exactly like the scalar reference.

#include <immintrin.h>

#include <algorithm>

#include "shcanet/simd/kernels.hpp"

namespace shcanet::simd {
namespace {

// Loads x[0], x[2], ..., x[14]. Reads x[0..15].
inline __m256 load_even_ps(const float* x) {
  const __m256 lo = _mm256_loadu_ps(x);
  const __m256 hi = _mm256_loadu_ps(x + 8);
  const __m256 mixed = _mm256_shuffle_ps(lo, hi, _MM_SHUFFLE(2, 0, 2, 0));
  return _mm256_castpd_ps(_mm256_permute4x64_pd(_mm256_castps_pd(mixed), _MM_SHUFFLE(3, 1, 2, 0)));
}

// Loads x[0], x[2], x[4], x[6]. Reads x[0..7].
inline __m256d load_even_pd(const double* x) {
  const __m256d lo = _mm256_loadu_pd(x);
  const __m256d hi = _mm256_loadu_pd(x + 4);
  return _mm256_permute4x64_pd(_mm256_unpacklo_pd(lo, hi), _MM_SHUFFLE(3, 1, 2, 0));
}

// Number of leading elements that can be processed in whole blocks of `width`
// without reading past x[(n-1)*stride].
inline std::size_t vector_extent(std::size_t n, std::size_t width, std::size_t stride) {
  if (stride == 1) return n - n % width;
  if (n <= width) return 0;
  return ((n - 1) / width) * width;
}

void axpy_f32(float* y, const float* x, float a, std::size_t n, std::size_t stride) {
  if (stride > 2) return scalar_kernels<float>().axpy(y, x, a, n, stride);
  const std::size_t body = vector_extent(n, 8, stride);
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  if (stride == 1) {
    for (; i < body; i += 8)
      _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_mul_ps(va, _mm256_loadu_ps(x + i))));
  } else {
    for (; i < body; i += 8)
      _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_mul_ps(va, load_even_ps(x + 2 * i))));
  }
  for (; i < n; ++i) y[i] += a * x[i * stride];
}

void axpy_f64(double* y, const double* x, double a, std::size_t n, std::size_t stride) {
  if (stride > 2) return scalar_kernels<double>().axpy(y, x, a, n, stride);
  const std::size_t body = vector_extent(n, 4, stride);
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  if (stride == 1) {
    for (; i < body; i += 4)
      _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
  } else {
    for (; i < body; i += 4)
      _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, load_even_pd(x + 2 * i))));
  }
  for (; i < n; ++i) y[i] += a * x[i * stride];
}

void axpy_scatter_f32(float* y, const float* x, float a, std::size_t n, std::size_t stride) {
  if (stride == 1) return axpy_f32(y, x, a, n, 1);
  scalar_kernels<float>().axpy_scatter(y, x, a, n, stride);
}

void axpy_scatter_f64(double* y, const double* x, double a, std::size_t n, std::size_t stride) {
  if (stride == 1) return axpy_f64(y, x, a, n, 1);
  scalar_kernels<double>().axpy_scatter(y, x, a, n, stride);
}

inline float reduce8(const float* s) { return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])); }
inline double reduce8(const double* s) { return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])); }

float dot_f32(const float* a, const float* b, std::size_t n, std::size_t stride) {
  if (stride > 2) return scalar_kernels<float>().dot(a, b, n, stride);
  const std::size_t full = n - n % 8;
  const std::size_t body = std::min(full, vector_extent(n, 8, stride));
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  if (stride == 1) {
    for (; i < body; i += 8) acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  } else {
    for (; i < body; i += 8) acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), load_even_ps(b + 2 * i)));
  }
  alignas(32) float s[8];
  _mm256_store_ps(s, acc);
  for (; i < full; i += 8)
    for (std::size_t l = 0; l < 8; ++l) s[l] += a[i + l] * b[(i + l) * stride];
  for (; i < n; ++i) s[i - full] += a[i] * b[i * stride];
  return reduce8(s);
}

double dot_f64(const double* a, const double* b, std::size_t n, std::size_t stride) {
  if (stride > 2) return scalar_kernels<double>().dot(a, b, n, stride);
  const std::size_t full = n - n % 8;
  const std::size_t body = std::min(full, vector_extent(n, 8, stride));
  __m256d lo = _mm256_setzero_pd();
  __m256d hi = _mm256_setzero_pd();
  std::size_t i = 0;
  if (stride == 1) {
    for (; i < body; i += 8) {
      lo = _mm256_add_pd(lo, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
      hi = _mm256_add_pd(hi, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
  } else {
    for (; i < body; i += 8) {
      lo = _mm256_add_pd(lo, _mm256_mul_pd(_mm256_loadu_pd(a + i), load_even_pd(b + 2 * i)));
      hi = _mm256_add_pd(hi, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), load_even_pd(b + 2 * i + 8)));
    }
  }
  alignas(32) double s[8];
  _mm256_store_pd(s, lo);
  _mm256_store_pd(s + 4, hi);
  for (; i < full; i += 8)
    for (std::size_t l = 0; l < 8; ++l) s[l] += a[i + l] * b[(i + l) * stride];
  for (; i < n; ++i) s[i - full] += a[i] * b[i * stride];
  return reduce8(s);
}

void add_f32(float* y, const float* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void add_f64(double* y, const double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void mul_f32(float* y, const float* a, const float* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void mul_f64(double* y, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void sgd_f32(float* p, float* v, const float* g, float lr, float momentum, std::size_t n) {
  const __m256 vl = _mm256_set1_ps(lr);
  const __m256 vm = _mm256_set1_ps(momentum);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 nv = _mm256_add_ps(_mm256_mul_ps(vm, _mm256_loadu_ps(v + i)), _mm256_loadu_ps(g + i));
    _mm256_storeu_ps(v + i, nv);
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), _mm256_mul_ps(vl, nv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void sgd_f64(double* p, double* v, const double* g, double lr, double momentum, std::size_t n) {
  const __m256d vl = _mm256_set1_pd(lr);
  const __m256d vm = _mm256_set1_pd(momentum);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d nv = _mm256_add_pd(_mm256_mul_pd(vm, _mm256_loadu_pd(v + i)), _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(v + i, nv);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), _mm256_mul_pd(vl, nv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

constexpr Kernels<float> kF32{Isa::avx2, &axpy_f32, &axpy_scatter_f32, &dot_f32, &add_f32, &mul_f32, &sgd_f32};
constexpr Kernels<double> kF64{Isa::avx2, &axpy_f64, &axpy_scatter_f64, &dot_f64, &add_f64, &mul_f64, &sgd_f64};

}  // namespace

template <>
const Kernels<float>* avx2_kernels<float>() {
  return &kF32;
}
template <>
const Kernels<double>* avx2_kernels<double>() {
  return &kF64;
}

}  // namespace shcanet::simd
