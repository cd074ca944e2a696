#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace hand3d {

/// Forward-mode dual number carrying N partial derivatives.
/// Only the operations needed by the rotation code are provided.
template <std::size_t N>
struct Jet {
  double v = 0.0;
  std::array<double, N> d{};

  Jet() = default;
  Jet(double value) : v(value) {}  // NOLINT: implicit lift from constants
  Jet(double value, std::size_t seed_index) : v(value) { d[seed_index] = 1.0; }

  friend Jet operator+(const Jet& a, const Jet& b) {
    Jet r(a.v + b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
  }
  friend Jet operator-(const Jet& a, const Jet& b) {
    Jet r(a.v - b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
  }
  friend Jet operator-(const Jet& a) {
    Jet r(-a.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = -a.d[i];
    return r;
  }
  friend Jet operator*(const Jet& a, const Jet& b) {
    Jet r(a.v * b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Jet operator/(const Jet& a, const Jet& b) {
    Jet r(a.v / b.v);
    const double inv = 1.0 / (b.v * b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv;
    return r;
  }
  Jet& operator+=(const Jet& o) { return *this = *this + o; }
  Jet& operator-=(const Jet& o) { return *this = *this - o; }
  Jet& operator*=(const Jet& o) { return *this = *this * o; }
};

template <std::size_t N>
Jet<N> chain(const Jet<N>& a, double value, double derivative) {
  Jet<N> r(value);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = derivative * a.d[i];
  return r;
}

template <std::size_t N>
Jet<N> sqrt(const Jet<N>& a) {
  const double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s);
}
template <std::size_t N>
Jet<N> sin(const Jet<N>& a) {
  return chain(a, std::sin(a.v), std::cos(a.v));
}
template <std::size_t N>
Jet<N> cos(const Jet<N>& a) {
  return chain(a, std::cos(a.v), -std::sin(a.v));
}

inline double value_of(double x) { return x; }
template <std::size_t N>
double value_of(const Jet<N>& x) {
  return x.v;
}

}  // namespace hand3d
