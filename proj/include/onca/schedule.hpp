#pragma once

#include <vector>

#include "onca/grid.hpp"

namespace onca {

/// One pyramid level: its extents, the per-axis upsampling factors to the
/// next finer level (all 1 at the finest level), and its step count.
struct LevelSpec {
    std::vector<int> extents;
    std::vector<int> factors_to_finer;
    int steps = 0;
};

/// Per-level resolutions and step counts, ordered coarsest first. The finest
/// level matches the input extents; the coarsest runs ceil(alpha0 * max
/// extent) steps and every refinement level runs refine_steps.
struct PyramidSchedule {
    std::vector<LevelSpec> levels;
    double alpha0 = 1.0;
    int refine_steps = 10;
    int min_extent = 5;

    int num_levels() const { return int(levels.size()); }
    const LevelSpec& coarsest() const { return levels.front(); }
    const LevelSpec& finest() const { return levels.back(); }
};

/// Derives the level stack for an input size. Halving stops per axis once it
/// would drop the extent below min_extent (that axis keeps factor 1). Throws
/// invalid-argument when no axis can be halved for a requested level, i.e. L
/// is too large for the extents.
PyramidSchedule build_schedule(const std::vector<int>& input_extents, int num_levels,
                               int min_extent = 5, double alpha0 = 1.0,
                               int refine_steps = 10);

}  // namespace onca
