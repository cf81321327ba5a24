#pragma once

#include <cstdint>
#include <vector>

#include "onca/model.hpp"
#include "onca/train.hpp"

namespace onca::oracle {

/// Double-precision twin of the coarse-to-fine forward pass, written as an
/// independent loop nest for gradient verification. It consumes the same
/// fire gates and weight values as the engines but keeps all state in f64,
/// so central differences at small epsilon are not swamped by f32 rounding.
double pyramid_loss(const OctreeModel& model, const CellGrid& image,
                    const std::vector<std::uint8_t>& target, double lambda_dice,
                    std::uint64_t seed);

/// Central difference (L(theta+eps) - L(theta-eps)) / 2 eps on the f64 twin,
/// identical fire masks on both sides.
double fd_param_grad(const OctreeModel& model, const CellGrid& image,
                     const std::vector<std::uint8_t>& target, double lambda_dice,
                     std::uint64_t seed, int level, int tensor, std::size_t index,
                     double epsilon);

/// Single-rollout twin (no pyramid), for the engine-level oracle tests.
/// Returns the final state in f64.
std::vector<double> rollout_f64(const std::vector<int>& dims, int image_channels,
                                const std::vector<double>& state0, const NcaWeights& w,
                                int steps, std::uint64_t seed, int level, float fire_rate);

}  // namespace onca::oracle
