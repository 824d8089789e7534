#pragma once

// Forward-mode dual numbers with a fixed number of infinitesimal parts.
//
// A Jet<N> carries a value and its gradient with respect to N seeded inputs.
// The renderer evaluates every per-face quantity as Jet<9> over the three
// projected vertices (u, v, inverse depth), and the parameter maps use small
// chunked jets to pull image-space gradients back onto the parameter vector.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <ostream>

namespace evtrack {

template <int N>
struct Jet {
  double a = 0.0;
  std::array<double, N> v{};

  Jet() = default;
  Jet(double value) : a(value) {}  // NOLINT(google-explicit-constructor)
  Jet(double value, int k) : a(value) { v[k] = 1.0; }

  static Jet seeded(double value, int k) { return Jet(value, k); }

  Jet& operator+=(const Jet& o) {
    a += o.a;
    for (int i = 0; i < N; ++i) v[i] += o.v[i];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    a -= o.a;
    for (int i = 0; i < N; ++i) v[i] -= o.v[i];
    return *this;
  }
  Jet& operator*=(const Jet& o) {
    for (int i = 0; i < N; ++i) v[i] = v[i] * o.a + a * o.v[i];
    a *= o.a;
    return *this;
  }
  Jet& operator/=(const Jet& o) {
    const double inv = 1.0 / o.a;
    const double q = a * inv;
    for (int i = 0; i < N; ++i) v[i] = (v[i] - q * o.v[i]) * inv;
    a = q;
    return *this;
  }
  Jet& operator*=(double s) {
    a *= s;
    for (auto& d : v) d *= s;
    return *this;
  }
  Jet& operator+=(double s) {
    a += s;
    return *this;
  }
  Jet& operator-=(double s) {
    a -= s;
    return *this;
  }
  Jet& operator/=(double s) { return *this *= (1.0 / s); }
};

/// Applies the chain rule for a scalar function with value f and slope df.
template <int N>
inline Jet<N> chain(const Jet<N>& x, double f, double df) {
  Jet<N> r;
  r.a = f;
  for (int i = 0; i < N; ++i) r.v[i] = df * x.v[i];
  return r;
}

template <int N>
inline Jet<N> operator-(const Jet<N>& x) {
  Jet<N> r;
  r.a = -x.a;
  for (int i = 0; i < N; ++i) r.v[i] = -x.v[i];
  return r;
}
template <int N>
inline Jet<N> operator+(Jet<N> x, const Jet<N>& y) { return x += y; }
template <int N>
inline Jet<N> operator-(Jet<N> x, const Jet<N>& y) { return x -= y; }
template <int N>
inline Jet<N> operator*(Jet<N> x, const Jet<N>& y) { return x *= y; }
template <int N>
inline Jet<N> operator/(Jet<N> x, const Jet<N>& y) { return x /= y; }

template <int N>
inline Jet<N> operator+(Jet<N> x, double s) { return x += s; }
template <int N>
inline Jet<N> operator+(double s, Jet<N> x) { return x += s; }
template <int N>
inline Jet<N> operator-(Jet<N> x, double s) { return x -= s; }
template <int N>
inline Jet<N> operator-(double s, const Jet<N>& x) {
  Jet<N> r = -x;
  r.a += s;
  return r;
}
template <int N>
inline Jet<N> operator*(Jet<N> x, double s) { return x *= s; }
template <int N>
inline Jet<N> operator*(double s, Jet<N> x) { return x *= s; }
template <int N>
inline Jet<N> operator/(Jet<N> x, double s) { return x /= s; }
template <int N>
inline Jet<N> operator/(double s, const Jet<N>& x) {
  const double inv = 1.0 / x.a;
  return chain(x, s * inv, -s * inv * inv);
}

template <int N>
inline bool operator<(const Jet<N>& x, const Jet<N>& y) { return x.a < y.a; }
template <int N>
inline bool operator>(const Jet<N>& x, const Jet<N>& y) { return x.a > y.a; }
template <int N>
inline bool operator<=(const Jet<N>& x, const Jet<N>& y) { return x.a <= y.a; }
template <int N>
inline bool operator>=(const Jet<N>& x, const Jet<N>& y) { return x.a >= y.a; }
template <int N>
inline bool operator<(const Jet<N>& x, double y) { return x.a < y; }
template <int N>
inline bool operator>(const Jet<N>& x, double y) { return x.a > y; }
template <int N>
inline bool operator<=(const Jet<N>& x, double y) { return x.a <= y; }
template <int N>
inline bool operator>=(const Jet<N>& x, double y) { return x.a >= y; }
template <int N>
inline bool operator==(const Jet<N>& x, const Jet<N>& y) { return x.a == y.a; }
template <int N>
inline bool operator!=(const Jet<N>& x, const Jet<N>& y) { return x.a != y.a; }

template <int N>
inline Jet<N> sqrt(const Jet<N>& x) {
  const double s = std::sqrt(x.a);
  return chain(x, s, 0.5 / s);
}
template <int N>
inline Jet<N> exp(const Jet<N>& x) {
  const double e = std::exp(x.a);
  return chain(x, e, e);
}
template <int N>
inline Jet<N> log(const Jet<N>& x) {
  return chain(x, std::log(x.a), 1.0 / x.a);
}
template <int N>
inline Jet<N> sin(const Jet<N>& x) {
  return chain(x, std::sin(x.a), std::cos(x.a));
}
template <int N>
inline Jet<N> cos(const Jet<N>& x) {
  return chain(x, std::cos(x.a), -std::sin(x.a));
}
template <int N>
inline Jet<N> abs(const Jet<N>& x) {
  return x.a < 0.0 ? -x : x;
}
template <int N>
inline Jet<N> abs2(const Jet<N>& x) {
  return x * x;
}
template <int N>
inline bool isfinite(const Jet<N>& x) {
  if (!std::isfinite(x.a)) return false;
  for (double d : x.v)
    if (!std::isfinite(d)) return false;
  return true;
}

template <int N>
std::ostream& operator<<(std::ostream& os, const Jet<N>& x) {
  os << "[" << x.a << " ; ";
  for (int i = 0; i < N; ++i) os << (i ? ", " : "") << x.v[i];
  return os << "]";
}

/// Plain value of a double or a jet.
inline double value_of(double x) { return x; }
template <int N>
inline double value_of(const Jet<N>& x) {
  return x.a;
}

}  // namespace evtrack

namespace Eigen {

template <int N>
struct NumTraits<evtrack::Jet<N>> : GenericNumTraits<evtrack::Jet<N>> {
  using Real = evtrack::Jet<N>;
  using NonInteger = evtrack::Jet<N>;
  using Nested = evtrack::Jet<N>;
  using Literal = evtrack::Jet<N>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1 + N,
    AddCost = 1 + N,
    MulCost = 1 + 2 * N,
  };
  static inline Real epsilon() { return Real(std::numeric_limits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline Real highest() { return Real(std::numeric_limits<double>::max()); }
  static inline Real lowest() { return Real(-std::numeric_limits<double>::max()); }
  static inline int digits10() { return std::numeric_limits<double>::digits10; }
};

template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<evtrack::Jet<N>, double, BinaryOp> {
  using ReturnType = evtrack::Jet<N>;
};
template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<double, evtrack::Jet<N>, BinaryOp> {
  using ReturnType = evtrack::Jet<N>;
};

}  // namespace Eigen
