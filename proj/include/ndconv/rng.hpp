#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ndconv/error.hpp"

namespace ndconv {

// Deterministic random source. mt19937_64 has a fully specified bit stream;
// the distributions below are hand-rolled because the std:: distribution
// objects are implementation-defined and would break cross-toolchain
// reproducibility of datasets and weight init.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive, unbiased.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw ConfigError("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
        const std::uint64_t limit = (UINT64_MAX / span) * span;
        std::uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return lo + static_cast<std::int64_t>(r % span);
    }

    // Standard normal via Box-Muller. Draws two uniforms per call; the sine
    // branch is discarded so the draw count per call is fixed.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
};

// Stable stream derivation, e.g. one shuffle stream per epoch.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace ndconv
