#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "onca/grid.hpp"
#include "onca/model.hpp"

namespace onca {

/// Offsets of the 3^dim perception window in row-major tap order. Both
/// engines enumerate taps through this table so their accumulation order is
/// identical.
std::vector<std::array<int, 3>> kernel_offsets(int ndim);

/// Per-step intermediates recorded during a training-mode rollout: the input
/// state, the pre-activation of the hidden layer, and the fire mask. Memory
/// grows linearly in steps x cells; inference never records a tape.
struct RolloutTape {
    int level = 0;
    std::uint64_t seed = 0;
    int step_offset = 0;
    float fire_rate = 0.5f;
    std::vector<CellGrid> states;
    std::vector<TrackedVec<float>> preacts;
    std::vector<TrackedVec<std::uint8_t>> masks;

    int steps() const { return int(states.size()); }
};

/// One layer-wise update step: perception conv (zero padding), concat with
/// the state, hidden layer + ReLU, update layer, fire-gated additive update,
/// then the image channels are restored from the input state. Whole-grid
/// intermediates are materialized per layer, which is this engine's defining
/// memory cost.
CellGrid nca_step_reference(const CellGrid& state, const NcaWeights& w,
                            const TrackedVec<std::uint8_t>& fire_mask);

/// Builds the fire mask for (seed, level, step) from the stateless gate.
TrackedVec<std::uint8_t> make_fire_mask(std::size_t cells, std::uint64_t seed, int level,
                                        int step, float fire_rate);

/// Applies `steps` update steps. Step indices continue from step_offset, so
/// a rollout may be split and resumed on the same random stream. Records a
/// tape when one is supplied.
CellGrid rollout_reference(CellGrid state, const NcaWeights& w, int steps,
                           std::uint64_t seed, int level, float fire_rate,
                           int step_offset = 0, RolloutTape* tape = nullptr);

/// Parameter gradients for one weight set, accumulated in double.
struct NcaGradients {
    std::vector<double> conv;
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;

    explicit NcaGradients(const NcaWeights& w)
        : conv(w.conv.size(), 0.0), w1(w.w1.size(), 0.0), b1(w.b1.size(), 0.0),
          w2(w.w2.size(), 0.0) {}

    void add_scaled(const NcaGradients& o, double s);
    void scale(double s);
    double* tensor(int which);
    const double* tensor(int which) const;
    std::size_t tensor_size(int which) const;
};

/// Backpropagation through the taped rollout. Accumulates parameter
/// gradients into `grads` and returns the gradient with respect to the
/// rollout's input state. Gradients through the image-channel clamp are
/// zeroed for channels [0,n); the fire mask acts as a constant multiplier.
CellGrid backward_rollout(const RolloutTape& tape, const CellGrid& out_grad,
                          const NcaWeights& w, NcaGradients& grads);

/// Identifies one scalar parameter inside an NcaWeights (tensor 0..3 =
/// conv, w1, b1, w2).
struct ParamRef {
    int tensor = 0;
    std::size_t index = 0;
};

std::vector<float>& weights_tensor(NcaWeights& w, int which);
const std::vector<float>& weights_tensor(const NcaWeights& w, int which);

/// Central-difference oracle: perturbs selected parameters of `w` and
/// re-runs the rollout with identical fire masks on both sides. The
/// denominator uses the actually-representable parameter difference.
std::vector<double> finite_diff_grad(
    const CellGrid& state, const NcaWeights& w, int steps, std::uint64_t seed, int level,
    float fire_rate, const std::function<double(const CellGrid&)>& loss,
    const std::vector<ParamRef>& params, double epsilon = 1e-3);

}  // namespace onca
