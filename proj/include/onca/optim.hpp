#pragma once

#include <vector>

#include "onca/model.hpp"
#include "onca/reference.hpp"

namespace onca {

struct AdamConfig {
    double lr0 = 1.6e-3;
    double lr_decay = 0.9992;  // per epoch
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// Bias-corrected Adam over all levels of an OctreeModel, with the learning
/// rate decayed once per epoch boundary. Moments are kept in double; the
/// parameters stay f32.
class AdamState {
public:
    AdamState(const OctreeModel& model, AdamConfig config);

    /// One update from accumulated gradients (one entry per level). Throws on
    /// non-finite gradients.
    void apply(OctreeModel& model, const std::vector<NcaGradients>& grads);

    void end_epoch();

    double lr() const { return lr_; }
    long long step_count() const { return step_; }
    int epoch() const { return epoch_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    double lr_;
    long long step_ = 0;
    int epoch_ = 0;
    std::vector<NcaGradients> m1_, m2_;
};

/// theta_shadow <- alpha * theta_shadow + (1 - alpha) * theta, evaluated as
/// shadow + (1-alpha) * (theta - shadow) so a converged shadow stays fixed
/// bit-exactly.
void ema_update(OctreeModel& shadow, const OctreeModel& model, double alpha);

}  // namespace onca
