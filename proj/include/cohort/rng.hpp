#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace cohort {

// Deterministic, platform-stable randomness. The engine is xoshiro256**
// seeded through splitmix64; every sampler below is implemented here rather
// than via <random> distributions, whose output differs across standard
// libraries. Streams are derived from (seed, purpose, index) so generation
// can run in parallel with schedule-independent results.

inline uint64_t splitmix64_next(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct Rng {
    std::array<uint64_t, 4> s{};

    static Rng from(uint64_t seed, uint64_t purpose = 0, uint64_t index = 0) {
        uint64_t x = seed;
        (void)splitmix64_next(x);
        x ^= 0xD1B54A32D192ED03ULL * (purpose + 1);
        (void)splitmix64_next(x);
        x ^= 0x8CB92BA72F3D8DD7ULL * (index + 1);
        Rng r;
        r.s[0] = splitmix64_next(x);
        r.s[1] = splitmix64_next(x);
        r.s[2] = splitmix64_next(x);
        r.s[3] = splitmix64_next(x);
        if ((r.s[0] | r.s[1] | r.s[2] | r.s[3]) == 0) r.s[0] = 1;
        return r;
    }

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t next_u64() {
        const uint64_t result = rotl(s[1] * 5, 7) * 9;
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // Uniform on [0,1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    // Uniform on (0,1): never exactly 0, safe under log().
    double next_double_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [lo, hi] by rejection-free Lemire-style reduction is
    // overkill here; modulo bias is irrelevant for simulation covariates, but
    // rejection keeps the stream exactly uniform anyway.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % span;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + static_cast<int64_t>(v % span);
    }

    // Box-Muller; both uniforms consumed, cosine branch returned. Stateless
    // apart from the engine, so stream splitting stays trivial.
    double normal() {
        double u1 = next_double_open();
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential(double mean) { return -mean * std::log(next_double_open()); }

    // Marsaglia-Tsang for shape >= 1; boost via the power trick below 1.
    double gamma(double shape) {
        if (shape < 1.0) {
            double u = next_double_open();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            double u = next_double_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Beta via two gammas; clamped into the open interval to honor the strict
    // (0,1) support downstream (mathematically the bounds occur with
    // probability zero; the clamp only guards floating-point rounding).
    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        double v = x / (x + y);
        const double eps = 1e-12;
        if (v < eps) v = eps;
        if (v > 1.0 - eps) v = 1.0 - eps;
        return v;
    }

    // Knuth inversion, chunked so the product never underflows for large means.
    int64_t poisson(double mean) {
        int64_t total = 0;
        while (mean > 30.0) {
            total += poisson_small(30.0);
            mean -= 30.0;
        }
        return total + poisson_small(mean);
    }

private:
    int64_t poisson_small(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        int64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= next_double_open();
        } while (p > limit);
        return k - 1;
    }
};

// Stream purposes for synthetic generation; fixed constants are part of the
// determinism contract (changing them changes every fixture).
namespace stream {
constexpr uint64_t kDemographics = 1;
constexpr uint64_t kUploadTimes = 2;
constexpr uint64_t kResponses = 3;
constexpr uint64_t kEvents = 4;
constexpr uint64_t kIntercepts = 5;
constexpr uint64_t kDirectGlmm = 6;
constexpr uint64_t kFolds = 7;
} // namespace stream

} // namespace cohort
