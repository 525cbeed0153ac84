#pragma once

#include <cstdint>
#include <vector>

namespace idmm {

// Deterministic splittable generator: xorshift128+ (128-bit state, 64-bit
// output), with the state derived from (seed, stream, step) through a
// splitmix64 chain. Identical keys give identical sequences on every
// platform; distinct keys give statistically independent streams, so any
// consumer can be handed its own generator without coordination.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t step);

    std::uint64_t next_u64();

    // Uniform in [0,1), 53-bit resolution.
    double next_double();

    // Uniform in [lo,hi); throws ParamError unless lo < hi.
    double uniform(double lo, double hi);

    // Uniform integer in [0,n), n >= 1.
    std::uint64_t next_below(std::uint64_t n);

    // Beta(alpha, alpha) in (0,1); Johnk's method for alpha <= 1, a
    // gamma ratio (Marsaglia-Tsang) otherwise. Throws ParamError for
    // alpha <= 0.
    double beta(double alpha);

    double normal(double mean, double stddev);

    // Fisher-Yates; deterministic for a given generator state.
    template <class V>
    void shuffle(V& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    double gamma(double shape);
    std::uint64_t s0_, s1_;
};

// Stream-id namespaces; combined with sub-indices by the callers so each
// (purpose, index) pair owns an independent sequence.
namespace streams {
constexpr std::uint64_t kInit = 1;       // parameter initialization
constexpr std::uint64_t kShuffle = 2;    // per-epoch dataset order
constexpr std::uint64_t kAugment = 3;    // per-sample crop/flip decisions
constexpr std::uint64_t kCutmix = 4;     // per-batch mixing decisions
constexpr std::uint64_t kSubsample = 5;  // import-time record selection
constexpr std::uint64_t kSynth = 6;      // synthetic data generation
constexpr std::uint64_t kVerify = 7;     // verification suite inputs

constexpr std::uint64_t make(std::uint64_t ns, std::uint64_t sub) {
    return (ns << 48) | (sub & 0xFFFFFFFFFFFFull);
}
} // namespace streams

} // namespace idmm
