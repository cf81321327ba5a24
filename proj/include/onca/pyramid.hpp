#pragma once

#include <cstdint>
#include <vector>

#include "onca/fused.hpp"
#include "onca/memtrack.hpp"
#include "onca/model.hpp"

namespace onca {

enum class EngineKind { reference, fused };

struct SegmentationResult {
    std::vector<int> dims;
    std::vector<std::uint8_t> mask;  // class id per cell (binary: 0/1)
    CellGrid logits;                 // trailing num_classes channels of the finest state
    std::vector<double> level_seconds;
    MemoryReport memory;
};

/// Carries the hidden state to the next finer level: hidden channels are
/// nearest-upsampled, image channels are replaced by that level's image.
CellGrid transfer_state(const CellGrid& coarse_state, const CellGrid& fine_image,
                        const AxisFactors& factors);

/// Builds the image pyramid by repeated mean-pooling, coarsest first.
/// pyramid[k] matches schedule.levels[k].
std::vector<CellGrid> build_image_pyramid(const CellGrid& image,
                                          const PyramidSchedule& schedule);

/// Full coarse-to-fine inference. The schedule is rebuilt for the actual
/// input extents (size invariance); level k always runs the k-th weight set.
/// Binary tasks threshold sigmoid(last channel) at 0.5; multi-class takes the
/// argmax of the trailing channels. Deterministic given the seed.
SegmentationResult segment(const CellGrid& image, const OctreeModel& model,
                           EngineKind engine, std::uint64_t seed);

/// Rollout dispatch shared by segment, training and the benchmarks.
CellGrid run_level(CellGrid state, const NcaWeights& w, int steps, std::uint64_t seed,
                   int level, float fire_rate, EngineKind engine);

}  // namespace onca
