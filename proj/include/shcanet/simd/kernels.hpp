#pragma once

// Inner-loop kernels used by the tensor engine and the optimizer.
//
// Every variant performs the same sequence of IEEE multiplies and adds per
// output element as the scalar reference, so switching ISA never changes a
// single bit of any result. Vector lanes only ever span independent outputs;
// the one reduction (dot) uses a fixed 8-way interleaved order that the
// scalar reference reproduces exactly.

#include <cstddef>
#include <string_view>

namespace shcanet::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

template <typename T>
struct Kernels {
  Isa isa;
  // y[i] += a * x[i * stride], i < n
  void (*axpy)(T* y, const T* x, T a, std::size_t n, std::size_t stride);
  // y[i * stride] += a * x[i], i < n
  void (*axpy_scatter)(T* y, const T* x, T a, std::size_t n, std::size_t stride);
  // sum_i a[i] * b[i * stride], 8-way interleaved partial sums then a fixed tree
  T (*dot)(const T* a, const T* b, std::size_t n, std::size_t stride);
  // y[i] += x[i]
  void (*add)(T* y, const T* x, std::size_t n);
  // y[i] = a[i] * b[i]
  void (*mul)(T* y, const T* a, const T* b, std::size_t n);
  // v = momentum * v + g;  p -= lr * v
  void (*sgd)(T* p, T* v, const T* g, T lr, T momentum, std::size_t n);
};

template <typename T>
const Kernels<T>& scalar_kernels();
template <typename T>
const Kernels<T>* avx2_kernels();  // nullptr when not compiled in
template <typename T>
const Kernels<T>* neon_kernels();  // nullptr when not compiled in

// Widest ISA supported by both the build and the running CPU.
Isa best_isa();
bool isa_available(Isa isa);

// Process-wide selection; defaults to best_isa(). Tests use force_isa to
// compare variants. Throws InvalidInput if the ISA is unavailable.
void force_isa(Isa isa);
Isa active_isa();

template <typename T>
const Kernels<T>& kernels();

// RAII override of the active ISA, restoring the previous one on exit.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { force_isa(isa); }
  ~ScopedIsa() { force_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace shcanet::simd
