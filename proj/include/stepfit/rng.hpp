#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace stepfit {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive well-separated seed streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

/// Uniform draw in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller, stateless (no cached second deviate).
inline double normal01(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Index draw from an unnormalized nonnegative weight vector.
inline int categorical_draw(Rng& rng, const Eigen::VectorXd& weights) {
    const double total = weights.sum();
    double u = uniform01(rng) * total;
    for (int k = 0; k + 1 < weights.size(); ++k) {
        u -= weights[k];
        if (u < 0.0) return k;
    }
    return static_cast<int>(weights.size()) - 1;
}

}  // namespace stepfit
