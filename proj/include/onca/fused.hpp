#pragma once

#include <cstdint>

#include "onca/grid.hpp"
#include "onca/model.hpp"

namespace onca {

/// Front/back grid pair for race-free in-step updates: cell computations
/// read only `front` and write only their own cell of `back`; the roles swap
/// between steps. Total persistent state is two C-channel grids regardless
/// of the step count.
struct DoubleBuffer {
    CellGrid front;
    CellGrid back;

    void swap() { std::swap(front, back); }
};

/// Cell-oriented inference engine: one pass computes an entire update step
/// per cell, holding the 2C + hidden intermediates in a constant-size
/// per-worker scratch instead of whole-grid layer buffers. Math and
/// accumulation order are identical to the layer-wise reference, so outputs
/// are bit-identical.
///
/// The engine is specialized for (channels, hidden) at construction; the
/// default 16/64 pair runs an unrolled kernel, other sizes a generic one.
class FusedEngine {
public:
    FusedEngine(int ndim, int channels, int hidden);

    int ndim() const { return ndim_; }
    int channels() const { return channels_; }
    int hidden() const { return hidden_; }

    /// Fills buffers.back from buffers.front for one step. Dimension
    /// mismatches with the specialization are invalid-argument.
    void step(DoubleBuffer& buffers, const NcaWeights& w, std::uint64_t seed, int level,
              int step, float fire_rate) const;

    /// Runs `steps` update steps on two persistent buffers. The input grid
    /// becomes the front buffer, so peak persistent memory is two grids plus
    /// weights, independent of the step count.
    CellGrid rollout(CellGrid state, const NcaWeights& w, int steps, std::uint64_t seed,
                     int level, float fire_rate, int step_offset = 0) const;

private:
    int ndim_;
    int channels_;
    int hidden_;
    bool specialized_;
};

}  // namespace onca
