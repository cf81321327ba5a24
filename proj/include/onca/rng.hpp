#pragma once

#include <cstdint>

namespace onca {

/// SplitMix64 finalizer. All randomness in the project (weight init, fire
/// gates, data synthesis, patch sampling) derives from this one mixer so that
/// every run is reproducible from a single seed.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

/// Sequential SplitMix64 stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return mix64(state_++); }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        // Multiply-shift; bias is negligible for the n used here.
        return std::uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    std::uint64_t fork(std::uint64_t stream) { return mix64(state_ ^ mix64(stream)); }

private:
    std::uint64_t state_;
};

}  // namespace onca
