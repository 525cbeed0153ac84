#include "idmm/rng.hpp"

#include <cmath>

#include "idmm/errors.hpp"

namespace idmm {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t step) {
    std::uint64_t key = seed;
    key = splitmix64(key) ^ stream;
    key = splitmix64(key) ^ step;
    s0_ = splitmix64(key);
    s1_ = splitmix64(key);
    if (s0_ == 0 && s1_ == 0) s1_ = 0x6A09E667F3BCC909ull;
}

std::uint64_t Rng::next_u64() {
    std::uint64_t x = s0_;
    const std::uint64_t y = s1_;
    s0_ = y;
    x ^= x << 23;
    s1_ = x ^ y ^ (x >> 17) ^ (y >> 26);
    return s1_ + y;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    if (!(lo < hi)) throw ParamError("uniform: requires lo < hi");
    return lo + next_double() * (hi - lo);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    if (n == 0) throw ParamError("next_below: n must be >= 1");
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::gamma(double shape) {
    // Marsaglia-Tsang; valid for shape >= 1.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal(0.0, 1.0);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = next_double();
        if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double Rng::beta(double alpha) {
    if (!(alpha > 0.0)) throw ParamError("beta: alpha must be > 0");
    if (alpha <= 1.0) {
        // Johnk's method.
        for (;;) {
            const double u = next_double();
            const double v = next_double();
            const double x = std::pow(u, 1.0 / alpha);
            const double y = std::pow(v, 1.0 / alpha);
            if (x + y <= 1.0 && x + y > 0.0) return x / (x + y);
        }
    }
    const double g1 = gamma(alpha);
    const double g2 = gamma(alpha);
    return g1 / (g1 + g2);
}

double Rng::normal(double mean, double stddev) {
    // Box-Muller; u1 in (0,1] keeps the log finite.
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586477 * u2);
}

} // namespace idmm
