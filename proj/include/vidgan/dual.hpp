// SPDX-License-Identifier: Apache-2.0
//
// Forward-mode dual numbers. Running a reverse pass over Dual<T> values
// yields exact Hessian-vector products (forward-over-reverse), which the
// gradient penalty uses to differentiate a squared input-gradient norm with
// respect to the discriminator parameters.

#pragma once

#include <cmath>
#include <ostream>
#include <type_traits>

namespace vidgan {

template <class T>
struct Dual {
  T v{};  // value
  T d{};  // tangent

  constexpr Dual() = default;
  constexpr Dual(T value) : v(value), d(0) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }

  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    const T inv = T(1) / b.v;
    return {a.v * inv, (a.d - a.v * inv * b.d) * inv};
  }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }

  friend bool operator==(const Dual& a, const Dual& b) { return a.v == b.v && a.d == b.d; }

  friend std::ostream& operator<<(std::ostream& os, const Dual& x) {
    return os << x.v << "+" << x.d << "e";
  }
};

template <class T> Dual<T> exp(const Dual<T>& x) { const T e = std::exp(x.v); return {e, e * x.d}; }
template <class T> Dual<T> log(const Dual<T>& x) { return {std::log(x.v), x.d / x.v}; }
template <class T> Dual<T> log1p(const Dual<T>& x) { return {std::log1p(x.v), x.d / (T(1) + x.v)}; }
template <class T> Dual<T> sqrt(const Dual<T>& x) {
  const T s = std::sqrt(x.v);
  return {s, x.d / (T(2) * s)};
}
template <class T> Dual<T> tanh(const Dual<T>& x) {
  const T t = std::tanh(x.v);
  return {t, (T(1) - t * t) * x.d};
}
template <class T> Dual<T> abs(const Dual<T>& x) { return x.v < T(0) ? -x : x; }

template <class S> struct scalar_traits {
  using real = S;
  static constexpr bool is_dual = false;
  static real value(const S& s) { return s; }
  static real tangent(const S&) { return real(0); }
};

template <class T> struct scalar_traits<Dual<T>> {
  using real = T;
  static constexpr bool is_dual = true;
  static real value(const Dual<T>& s) { return s.v; }
  static real tangent(const Dual<T>& s) { return s.d; }
};

template <class S> using real_t = typename scalar_traits<S>::real;
template <class S> inline constexpr bool is_dual_v = scalar_traits<S>::is_dual;

template <class S> real_t<S> value_of(const S& s) { return scalar_traits<S>::value(s); }
template <class S> real_t<S> tangent_of(const S& s) { return scalar_traits<S>::tangent(s); }

}  // namespace vidgan
