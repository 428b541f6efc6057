#pragma once

#include <array>
#include <cmath>

#include "cohort/special.hpp"

namespace cohort {

// First-order forward-mode dual numbers with a fixed partial capacity.
// The marginal-likelihood code is templated on the scalar type; evaluating it
// with Dual yields the exact analytic gradient of the objective, including
// the implicit dependence of each random-effect mode on the parameters (the
// mode is located in doubles, then a single dual Newton step at the root
// propagates the implicit-function derivative exactly).
struct Dual {
    static constexpr int kCap = 24;

    double v = 0.0;
    int n = 0;
    std::array<double, kCap> d{};

    Dual() = default;
    static Dual constant(double x, int n_) {
        Dual out;
        out.v = x;
        out.n = n_;
        return out;
    }
    static Dual variable(double x, int n_, int k) {
        Dual out = constant(x, n_);
        out.d[static_cast<size_t>(k)] = 1.0;
        return out;
    }
};

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

inline Dual operator-(const Dual& a) {
    Dual out = a;
    out.v = -a.v;
    for (int i = 0; i < a.n; ++i) out.d[i] = -a.d[i];
    return out;
}

inline Dual operator+(const Dual& a, const Dual& b) {
    Dual out = a;
    out.v = a.v + b.v;
    for (int i = 0; i < a.n; ++i) out.d[i] = a.d[i] + b.d[i];
    return out;
}
inline Dual operator+(const Dual& a, double b) {
    Dual out = a;
    out.v = a.v + b;
    return out;
}
inline Dual operator+(double a, const Dual& b) { return b + a; }

inline Dual operator-(const Dual& a, const Dual& b) {
    Dual out = a;
    out.v = a.v - b.v;
    for (int i = 0; i < a.n; ++i) out.d[i] = a.d[i] - b.d[i];
    return out;
}
inline Dual operator-(const Dual& a, double b) {
    Dual out = a;
    out.v = a.v - b;
    return out;
}
inline Dual operator-(double a, const Dual& b) {
    Dual out = -b;
    out.v = a - b.v;
    return out;
}

inline Dual operator*(const Dual& a, const Dual& b) {
    Dual out = a;
    out.v = a.v * b.v;
    for (int i = 0; i < a.n; ++i) out.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return out;
}
inline Dual operator*(const Dual& a, double b) {
    Dual out = a;
    out.v = a.v * b;
    for (int i = 0; i < a.n; ++i) out.d[i] = a.d[i] * b;
    return out;
}
inline Dual operator*(double a, const Dual& b) { return b * a; }

inline Dual operator/(const Dual& a, const Dual& b) {
    Dual out = a;
    const double inv = 1.0 / b.v;
    out.v = a.v * inv;
    for (int i = 0; i < a.n; ++i) out.d[i] = (a.d[i] - out.v * b.d[i]) * inv;
    return out;
}
inline Dual operator/(const Dual& a, double b) { return a * (1.0 / b); }
inline Dual operator/(double a, const Dual& b) {
    Dual out = b;
    const double inv = 1.0 / b.v;
    out.v = a * inv;
    const double s = -out.v * inv;
    for (int i = 0; i < b.n; ++i) out.d[i] = s * b.d[i];
    return out;
}

inline Dual& operator+=(Dual& a, const Dual& b) { return a = a + b; }
inline Dual& operator-=(Dual& a, const Dual& b) { return a = a - b; }
inline Dual& operator*=(Dual& a, const Dual& b) { return a = a * b; }

inline bool operator<(const Dual& a, double b) { return a.v < b; }
inline bool operator>(const Dual& a, double b) { return a.v > b; }

namespace dual_detail {
// Chain rule for a unary primitive: f(a) with known f(a.v) and f'(a.v).
inline Dual unary(const Dual& a, double fv, double dfv) {
    Dual out = a;
    out.v = fv;
    for (int i = 0; i < a.n; ++i) out.d[i] = dfv * a.d[i];
    return out;
}
} // namespace dual_detail

inline Dual exp(const Dual& a) {
    const double e = std::exp(a.v);
    return dual_detail::unary(a, e, e);
}
inline Dual log(const Dual& a) { return dual_detail::unary(a, std::log(a.v), 1.0 / a.v); }
inline Dual log1p(const Dual& a) {
    return dual_detail::unary(a, std::log1p(a.v), 1.0 / (1.0 + a.v));
}
inline Dual sqrt(const Dual& a) {
    const double r = std::sqrt(a.v);
    return dual_detail::unary(a, r, 0.5 / r);
}
inline Dual lgamma(const Dual& a) {
    return dual_detail::unary(a, std::lgamma(a.v), digamma(a.v));
}
inline Dual digamma(const Dual& a) { return dual_detail::unary(a, digamma(a.v), trigamma(a.v)); }
inline Dual trigamma(const Dual& a) {
    return dual_detail::unary(a, trigamma(a.v), tetragamma(a.v));
}
inline Dual logistic(const Dual& a) {
    const double m = logistic(a.v);
    return dual_detail::unary(a, m, m * (1.0 - m));
}

} // namespace cohort
