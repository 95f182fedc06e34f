#pragma once

// Forward-mode dual numbers with N tangent directions. Used to differentiate
// the box-regression losses with respect to the four raw box logits.

#include <array>
#include <cmath>
#include <concepts>

namespace shcanet::loss {

template <int N>
struct Dual {
  double v = 0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: constants promote implicitly
  static Dual variable(double value, int direction) {
    Dual x(value);
    x.d[static_cast<std::size_t>(direction)] = 1.0;
    return x;
  }
};

template <std::floating_point F>
F value_of(F x) {
  return x;
}
template <int N>
double value_of(const Dual<N>& x) {
  return x.v;
}

template <int N>
Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v + b.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
template <int N>
Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v - b.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
template <int N>
Dual<N> operator-(const Dual<N>& a) {
  Dual<N> r(-a.v);
  for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
  return r;
}
template <int N>
Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v * b.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
template <int N>
Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v / b.v);
  for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
template <int N>
Dual<N> operator+(const Dual<N>& a, double b) { return a + Dual<N>(b); }
template <int N>
Dual<N> operator+(double a, const Dual<N>& b) { return Dual<N>(a) + b; }
template <int N>
Dual<N> operator-(const Dual<N>& a, double b) { return a - Dual<N>(b); }
template <int N>
Dual<N> operator-(double a, const Dual<N>& b) { return Dual<N>(a) - b; }
template <int N>
Dual<N> operator*(const Dual<N>& a, double b) { return a * Dual<N>(b); }
template <int N>
Dual<N> operator*(double a, const Dual<N>& b) { return Dual<N>(a) * b; }
template <int N>
Dual<N> operator/(const Dual<N>& a, double b) { return a / Dual<N>(b); }
template <int N>
Dual<N> operator/(double a, const Dual<N>& b) { return Dual<N>(a) / b; }

template <int N, typename F, typename G>
Dual<N> chain(const Dual<N>& x, F f, G df) {
  Dual<N> r(f(x.v));
  const double s = df(x.v);
  for (int i = 0; i < N; ++i) r.d[i] = s * x.d[i];
  return r;
}

template <int N>
Dual<N> sqrt(const Dual<N>& x) {
  return chain(x, [](double v) { return std::sqrt(v); }, [](double v) { return 0.5 / std::sqrt(v); });
}
template <int N>
Dual<N> atan(const Dual<N>& x) {
  return chain(x, [](double v) { return std::atan(v); }, [](double v) { return 1.0 / (1.0 + v * v); });
}
template <int N>
Dual<N> exp(const Dual<N>& x) {
  return chain(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}
// x^p for x >= 0; the derivative at x = 0 is taken as its limit for p >= 1.
template <int N>
Dual<N> pow(const Dual<N>& x, double p) {
  return chain(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v) { return v == 0.0 ? (p == 1.0 ? 1.0 : 0.0) : p * std::pow(v, p - 1.0); });
}

// min/max select one operand, tangent included.
template <typename S>
S smin(const S& a, const S& b) {
  return value_of(b) < value_of(a) ? b : a;
}
template <typename S>
S smax(const S& a, const S& b) {
  return value_of(b) > value_of(a) ? b : a;
}

}  // namespace shcanet::loss
