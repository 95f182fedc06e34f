#include <atomic>
#include <string>

#include "shcanet/error.hpp"
#include "shcanet/simd/kernels.hpp"

namespace shcanet::simd {

// Variants not compiled into this build resolve to null.
#ifndef SHCANET_HAVE_AVX2
template <>
const Kernels<float>* avx2_kernels<float>() {
  return nullptr;
}
template <>
const Kernels<double>* avx2_kernels<double>() {
  return nullptr;
}
#endif
#ifndef SHCANET_HAVE_NEON
template <>
const Kernels<float>* neon_kernels<float>() {
  return nullptr;
}
template <>
const Kernels<double>* neon_kernels<double>() {
  return nullptr;
}
#endif

namespace {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(SHCANET_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::neon:
#if defined(SHCANET_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{best_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) { return cpu_supports(isa); }

Isa best_isa() {
  if (cpu_supports(Isa::avx2)) return Isa::avx2;
  if (cpu_supports(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

void force_isa(Isa isa) {
  if (!isa_available(isa)) throw InvalidInput("instruction set " + std::string(isa_name(isa)) + " is not available");
  active().store(isa);
}

Isa active_isa() { return active().load(); }

template <typename T>
const Kernels<T>& kernels() {
  switch (active_isa()) {
    case Isa::avx2:
      return *avx2_kernels<T>();
    case Isa::neon:
      return *neon_kernels<T>();
    case Isa::scalar:
      break;
  }
  return scalar_kernels<T>();
}

template const Kernels<float>& kernels<float>();
template const Kernels<double>& kernels<double>();

}  // namespace shcanet::simd
