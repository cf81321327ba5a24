#pragma once

#include <cstdint>

#include "onca/rng.hpp"

namespace onca {

/// Stateless fire gate for the stochastic cell update. A cell applies its
/// additive update at a given step iff fire_value < fire_rate. Pure function
/// of (seed, level, step, cell): both engines and any worker partitioning
/// evaluate the same gates, and a rollout can be resumed by continuing the
/// step index.
inline constexpr std::uint64_t kFireLevelStride = 0x9E3779B97F4A7C15ull;
inline constexpr std::uint64_t kFireCellStride = 0xBF58476D1CE4E5B9ull;

/// Uniform value in [0, 1) with 24-bit resolution (top bits of the mix).
inline float fire_value(std::uint64_t seed, int level, int step, std::uint64_t cell) {
    const std::uint64_t lane =
        mix64(seed ^ mix64(std::uint64_t(level) * kFireLevelStride + std::uint64_t(step)));
    const std::uint64_t z = mix64(lane ^ mix64(cell * kFireCellStride));
    return float(z >> 40) * 0x1.0p-24f;
}

inline bool fires(std::uint64_t seed, int level, int step, std::uint64_t cell, float fire_rate) {
    return fire_value(seed, level, step, cell) < fire_rate;
}

/// Per-(level, step) half of the gate, hoisted out of cell loops.
struct FireStream {
    std::uint64_t lane;
    float rate;

    FireStream(std::uint64_t seed, int level, int step, float fire_rate)
        : lane(mix64(seed ^ mix64(std::uint64_t(level) * kFireLevelStride + std::uint64_t(step)))),
          rate(fire_rate) {}

    bool fires(std::uint64_t cell) const {
        const std::uint64_t z = mix64(lane ^ mix64(cell * kFireCellStride));
        return float(z >> 40) * 0x1.0p-24f < rate;
    }
};

}  // namespace onca
