#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace aaa {

// Engine output is fully specified by the standard; the helpers below avoid the
// implementation-defined std distributions so streams are portable bit-for-bit.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

/// Uniform draw on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased integer on [0, bound) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t bound) {
    const std::uint64_t limit = Rng::max() - Rng::max() % bound;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % bound;
}

inline double exponential(Rng& rng) {
    double u;
    do {
        u = uniform01(rng);
    } while (u == 0.0);
    return -std::log(u);
}

inline int bernoulli(Rng& rng, double p) { return uniform01(rng) < p ? 1 : 0; }

}  // namespace aaa
