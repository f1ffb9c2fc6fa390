#pragma once
#include <cmath>
#include <cstdint>
#include <random>

namespace hetpeer {

using Rng = std::mt19937_64;

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Independent stream keyed by (seed, index); used for per-replicate and
/// per-group randomness so parallel schedules cannot change the draws.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL)));
}

/// Uniform draw on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard logistic draw by inverse CDF.
inline double logistic_draw(Rng& rng) {
    const double u = uniform_open(rng);
    return std::log(u / (1.0 - u));
}

} // namespace hetpeer
