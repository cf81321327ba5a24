#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onca/schedule.hpp"

namespace onca {

/// Parameters of one backbone cell-update rule: a depthwise 3^dim perception
/// convolution (no bias), a hidden linear layer with bias, ReLU, and a final
/// linear layer without bias that emits the additive update.
///
/// Layout is fixed so that both engines and the file format agree:
///   conv: channel-major, kernel taps row-major      [C][3^dim]
///   w1:   input-major                               [2C][hidden]
///   w2:   input-major                               [hidden][C]
struct NcaWeights {
    int ndim = 2;
    int channels = 16;
    int hidden = 64;
    std::vector<float> conv;
    std::vector<float> b1;
    std::vector<float> w1;
    std::vector<float> w2;

    int kernel_taps() const { return ndim == 3 ? 27 : 9; }

    std::size_t param_count() const {
        return std::size_t(channels) * kernel_taps() + std::size_t(2 * channels) * hidden +
               std::size_t(hidden) + std::size_t(hidden) * channels;
    }
};

struct ModelConfig {
    int ndim = 2;
    int channels = 16;
    int hidden = 64;
};

/// Uniform(-1/sqrt(fan_in), +) init for conv and w1, zero bias, zero final
/// layer, so a fresh model is a do-nothing automaton. Deterministic per seed.
NcaWeights init_weights(const ModelConfig& config, std::uint64_t rng_seed);

/// The full multi-level model: one weight set per pyramid level (coarsest
/// first) plus the schedule it was trained with.
struct OctreeModel {
    std::vector<NcaWeights> levels;
    PyramidSchedule schedule;
    int image_channels = 1;
    int num_classes = 1;
    float fire_rate = 0.5f;
    std::uint64_t seed_of_record = 0;

    int channels() const { return levels.empty() ? 0 : levels.front().channels; }
    int hidden() const { return levels.empty() ? 0 : levels.front().hidden; }
    int ndim() const { return levels.empty() ? 0 : levels.front().ndim; }
};

OctreeModel init_model(const ModelConfig& config, const PyramidSchedule& schedule,
                       int image_channels, int num_classes, std::uint64_t seed,
                       float fire_rate = 0.5f);

std::size_t count_params(const OctreeModel& model);

/// "ONCA" container: magic, u32 version, u32 header length, JSON header,
/// then the per-level weight blob coarsest to finest, little-endian f32.
/// load(save(m)) is bit-identical. Distinct errors for bad magic, version
/// mismatch, truncated header/blob, and blob/header size disagreement.
void save_model(const OctreeModel& model, const std::string& path);
OctreeModel load_model(const std::string& path);

}  // namespace onca
