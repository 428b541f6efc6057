#pragma once

#include <cmath>

namespace cohort {

// Special functions backing the test statistics and the Beta likelihood.
// No statistics runtime is assumed: the t CDF is computed from the
// regularized incomplete beta via a modified Lentz continued fraction, and
// the polygamma family uses upward recurrence plus asymptotic series. All of
// these are validated in tests against high-precision reference values.

double digamma(double x);    // psi(x), x > 0
double trigamma(double x);   // psi'(x), x > 0
double tetragamma(double x); // psi''(x), x > 0

// Regularized incomplete beta I_x(a, b), a,b > 0, x in [0,1].
double reg_inc_beta(double a, double b, double x);

// Student-t distribution with (possibly fractional) dof v.
double t_cdf(double t, double v);
double t_two_sided_p(double t, double v); // 2 * P(T >= |t|)

// Normal-based two-sided p for Wald z statistics.
inline double normal_two_sided_p(double z) {
    return std::erfc(std::fabs(z) / 1.4142135623730951);
}

inline double logistic(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace cohort
