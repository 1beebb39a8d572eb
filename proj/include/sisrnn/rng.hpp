#pragma once

#include <cmath>
#include <cstdint>

namespace sisrnn {

/// Counter-based deterministic random stream.
///
/// A stream is the pair (key, counter). Draw i of stream k is
/// splitmix64(key + i * GAMMA): a pure function of (key, i), so any draw can
/// be replayed from the seed alone and independent substreams can be derived
/// with fork() without consuming state. Every stochastic quantity in this
/// codebase is produced through one of these streams; experiments replay
/// bit-exactly from a single seed.
struct RngState {
    uint64_t key = 0;
    uint64_t counter = 0;

    static constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ull;

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static RngState from_seed(uint64_t seed) { return RngState{mix(seed + kGamma), 0}; }

    /// Derived stream, independent of this one and of siblings with other tags.
    /// Does not advance this stream.
    RngState fork(uint64_t tag) const {
        return RngState{mix(key ^ mix(tag + kGamma)), 0};
    }

    uint64_t next_u64() { return mix(key + (++counter) * kGamma); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; consumes two uniforms, no cached spare
    /// (the state stays a plain counter).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        // u1 == 0 would take log(0); nudge to the smallest representable draw.
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool bernoulli(double p) { return uniform01() < p; }
};

}  // namespace sisrnn
