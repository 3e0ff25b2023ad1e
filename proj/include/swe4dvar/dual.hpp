#pragma once

namespace swe4dvar {

/// First-order forward-mode number: value plus one directional derivative.
/// The derivative part is linear in the incoming derivatives, so scaling every
/// seed by a power of two scales every result exactly.
struct Dual {
    double v = 0.0;
    double d = 0.0;

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
    constexpr Dual(double value, double deriv) : v(value), d(deriv) {}

    constexpr Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    constexpr Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
};

constexpr Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
constexpr Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
constexpr Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
constexpr Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
constexpr Dual operator/(const Dual& a, const Dual& b) {
    const double r = a.v / b.v;
    return {r, (a.d - r * b.d) / b.v};
}
constexpr Dual operator+(const Dual& a, double b) { return {a.v + b, a.d}; }
constexpr Dual operator+(double a, const Dual& b) { return {a + b.v, b.d}; }
constexpr Dual operator-(const Dual& a, double b) { return {a.v - b, a.d}; }
constexpr Dual operator-(double a, const Dual& b) { return {a - b.v, -b.d}; }
constexpr Dual operator*(const Dual& a, double b) { return {a.v * b, a.d * b}; }
constexpr Dual operator*(double a, const Dual& b) { return {a * b.v, a * b.d}; }
constexpr Dual operator/(const Dual& a, double b) { return {a.v / b, a.d / b}; }
constexpr Dual operator/(double a, const Dual& b) {
    const double r = a / b.v;
    return {r, -(r * b.d) / b.v};
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

}  // namespace swe4dvar
