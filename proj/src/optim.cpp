#include "onca/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace onca {

AdamState::AdamState(const OctreeModel& model, AdamConfig config)
    : cfg_(config), lr_(config.lr0) {
    for (const auto& w : model.levels) {
        m1_.emplace_back(w);
        m2_.emplace_back(w);
    }
}

void AdamState::apply(OctreeModel& model, const std::vector<NcaGradients>& grads) {
    if (grads.size() != model.levels.size())
        throw std::invalid_argument("adam: gradient level count mismatch");
    step_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));

    for (std::size_t l = 0; l < model.levels.size(); ++l) {
        NcaWeights& w = model.levels[l];
        for (int tensor = 0; tensor < 4; ++tensor) {
            std::vector<float>& theta = weights_tensor(w, tensor);
            const double* g = grads[l].tensor(tensor);
            double* m = m1_[l].tensor(tensor);
            double* v = m2_[l].tensor(tensor);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double gi = g[i];
                if (!std::isfinite(gi))
                    throw std::runtime_error("adam: non-finite gradient, aborting");
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                theta[i] = float(double(theta[i]) - lr_ * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }
}

void AdamState::end_epoch() {
    epoch_ += 1;
    lr_ *= cfg_.lr_decay;
}

void ema_update(OctreeModel& shadow, const OctreeModel& model, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0)
        throw std::invalid_argument("ema_update: alpha must be in [0, 1)");
    if (shadow.levels.size() != model.levels.size())
        throw std::invalid_argument("ema_update: level count mismatch");
    const double k = 1.0 - alpha;
    for (std::size_t l = 0; l < model.levels.size(); ++l) {
        for (int tensor = 0; tensor < 4; ++tensor) {
            std::vector<float>& s = weights_tensor(shadow.levels[l], tensor);
            const std::vector<float>& t = weights_tensor(model.levels[l], tensor);
            for (std::size_t i = 0; i < s.size(); ++i)
                s[i] = float(double(s[i]) + k * (double(t[i]) - double(s[i])));
        }
    }
}

}  // namespace onca
