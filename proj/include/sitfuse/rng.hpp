#pragma once

#include <cmath>
#include <cstdint>

namespace sitfuse {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen as the project-wide generator
// because its output stream is fully defined by the constants below, so every
// artifact is reproducible from a 64-bit seed regardless of platform or
// standard library. Uniform doubles take the top 53 bits; normals use the
// Box-Muller transform on two uniforms (the sine half is discarded).
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo,hi).
    double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0,n) by rejection; n must be >0.
    uint64_t next_below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; consumes exactly two uniforms.
    double next_normal() {
        double u1 = next_double();
        const double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double next_normal(double mean, double sigma) { return mean + sigma * next_normal(); }

    bool next_bernoulli(double p) { return next_double() < p; }

private:
    uint64_t state_;
};

// Fixed per-component stream tags. Every stochastic stage derives its seed as
// derive_seed(global_seed, tag) so stages stay decoupled and reruns of a
// single stage see the same stream.
namespace seed_tag {
inline constexpr uint64_t kSceneGen = 0x01;
inline constexpr uint64_t kEncoder = 0x02;
inline constexpr uint64_t kTree = 0x03;
inline constexpr uint64_t kSampling = 0x04;
inline constexpr uint64_t kLabels = 0x05;
}  // namespace seed_tag

inline uint64_t derive_seed(uint64_t global_seed, uint64_t tag) {
    SplitMix64 g(global_seed ^ (tag * 0xA24BAED4963EE407ULL));
    return g.next_u64();
}

}  // namespace sitfuse
