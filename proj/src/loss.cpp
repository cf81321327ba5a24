#include "onca/loss.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <stdexcept>

namespace onca {

namespace {

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double clamped_log(double p) {
    return std::log(std::max(p, 1e-12));
}

}  // namespace

double dice_loss(const float* probs, const float* target_onehot, int classes,
                 std::size_t cells) {
    if (classes < 1) throw std::invalid_argument("dice_loss: classes must be >= 1");
    double acc = 0.0;
    for (int c = 0; c < classes; ++c) {
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        for (std::size_t i = 0; i < cells; ++i) {
            const double p = probs[i * classes + c];
            const double t = target_onehot[i * classes + c];
            inter += p * t;
            psum += p;
            tsum += t;
        }
        acc += 1.0 - (2.0 * inter + kDiceSmoothing) / (psum + tsum + kDiceSmoothing);
    }
    return acc / classes;
}

double bce_loss(const float* probs, const float* target_onehot, int classes,
                std::size_t cells) {
    double acc = 0.0;
    if (classes == 1) {
        for (std::size_t i = 0; i < cells; ++i) {
            const double p = probs[i];
            const double t = target_onehot[i];
            acc -= t * clamped_log(p) + (1.0 - t) * clamped_log(1.0 - p);
        }
    } else {
        for (std::size_t i = 0; i < cells; ++i)
            for (int c = 0; c < classes; ++c) {
                const double t = target_onehot[i * classes + c];
                if (t != 0.0) acc -= t * clamped_log(probs[i * classes + c]);
            }
    }
    return acc / double(cells);
}

double combined_loss(const float* probs, const float* target_onehot, int classes,
                     std::size_t cells, double lambda_dice) {
    if (lambda_dice < 0.0 || lambda_dice > 2.0)
        throw std::invalid_argument("combined_loss: lambda must be in [0, 2]");
    return (2.0 - lambda_dice) * bce_loss(probs, target_onehot, classes, cells) +
           lambda_dice * dice_loss(probs, target_onehot, classes, cells);
}

LossValue combined_loss_grad(const CellGrid& state, int classes,
                             const std::vector<std::uint8_t>& target_ids, double lambda_dice,
                             CellGrid& grad_out) {
    const std::size_t cells = state.cells();
    if (target_ids.size() != cells)
        throw std::invalid_argument("combined_loss_grad: target size mismatch");
    if (lambda_dice < 0.0 || lambda_dice > 2.0)
        throw std::invalid_argument("combined_loss_grad: lambda must be in [0, 2]");
    const int C = state.channels();
    const int first_logit = C - classes;
    if (first_logit < state.image_channels())
        throw std::invalid_argument("combined_loss_grad: logits overlap image channels");

    grad_out = CellGrid(state.shape(), state.image_channels(), AllocClass::transient,
                        "loss_grad");

    LossValue out;
    const double n = double(cells);

    if (classes == 1) {
        std::vector<double> p(cells);
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        for (std::size_t i = 0; i < cells; ++i) {
            const double x = state.at(i, first_logit);
            const double t = target_ids[i] ? 1.0 : 0.0;
            p[i] = 1.0 / (1.0 + std::exp(-x));
            out.bce += softplus(-x) + (1.0 - t) * x;
            inter += p[i] * t;
            psum += p[i];
            tsum += t;
        }
        out.bce /= n;
        const double denom = psum + tsum + kDiceSmoothing;
        const double numer = 2.0 * inter + kDiceSmoothing;
        out.dice = 1.0 - numer / denom;
        for (std::size_t i = 0; i < cells; ++i) {
            const double t = target_ids[i] ? 1.0 : 0.0;
            const double d_dice_dp = -(2.0 * t * denom - numer) / (denom * denom);
            const double d_bce_dx = (p[i] - t) / n;
            const double d_dice_dx = d_dice_dp * p[i] * (1.0 - p[i]);
            grad_out.at(i, first_logit) =
                float((2.0 - lambda_dice) * d_bce_dx + lambda_dice * d_dice_dx);
        }
    } else {
        std::vector<double> p(cells * std::size_t(classes));
        std::vector<double> inter(classes, 0.0), psum(classes, 0.0), tsum(classes, 0.0);
        for (std::size_t i = 0; i < cells; ++i) {
            const float* x = state.data() + i * C + first_logit;
            double xmax = x[0];
            for (int c = 1; c < classes; ++c) xmax = std::max(xmax, double(x[c]));
            double z = 0.0;
            for (int c = 0; c < classes; ++c) z += std::exp(double(x[c]) - xmax);
            const int tid = target_ids[i];
            if (tid >= classes)
                throw std::invalid_argument("combined_loss_grad: target id out of range");
            out.bce += std::log(z) + xmax - double(x[tid]);
            for (int c = 0; c < classes; ++c) {
                const double pc = std::exp(double(x[c]) - xmax) / z;
                p[i * classes + c] = pc;
                inter[c] += pc * (c == tid ? 1.0 : 0.0);
                psum[c] += pc;
                tsum[c] += c == tid ? 1.0 : 0.0;
            }
        }
        out.bce /= n;

        std::vector<double> numer(classes), denom(classes);
        for (int c = 0; c < classes; ++c) {
            denom[c] = psum[c] + tsum[c] + kDiceSmoothing;
            numer[c] = 2.0 * inter[c] + kDiceSmoothing;
            out.dice += 1.0 - numer[c] / denom[c];
        }
        out.dice /= classes;

        for (std::size_t i = 0; i < cells; ++i) {
            const int tid = target_ids[i];
            // dDice/dp per class, then through the softmax Jacobian.
            double dot = 0.0;
            std::vector<double> gd(classes);
            for (int c = 0; c < classes; ++c) {
                const double t = c == tid ? 1.0 : 0.0;
                gd[c] = -(2.0 * t * denom[c] - numer[c]) / (denom[c] * denom[c] * classes);
                dot += gd[c] * p[i * classes + c];
            }
            float* g = grad_out.data() + i * C + first_logit;
            for (int c = 0; c < classes; ++c) {
                const double t = c == tid ? 1.0 : 0.0;
                const double pc = p[i * classes + c];
                const double d_bce = (pc - t) / n;
                const double d_dice = pc * (gd[c] - dot);
                g[c] = float((2.0 - lambda_dice) * d_bce + lambda_dice * d_dice);
            }
        }
    }

    out.combined = (2.0 - lambda_dice) * out.bce + lambda_dice * out.dice;
    return out;
}

DiceScores hard_dice(const std::vector<std::uint8_t>& prediction,
                     const std::vector<std::uint8_t>& target, int num_classes) {
    if (prediction.size() != target.size())
        throw std::invalid_argument("hard_dice: size mismatch");
    // Binary masks hold ids {0,1} and score class 1; multi-class ids are the
    // argmax range [0, num_classes) with 0 as background.
    const int last_class = num_classes == 1 ? 1 : num_classes - 1;
    DiceScores out;
    out.per_class.assign(std::size_t(last_class) + 1,
                         std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int counted = 0;
    for (int c = 1; c <= last_class; ++c) {
        std::size_t np = 0, nt = 0, overlap = 0;
        for (std::size_t i = 0; i < prediction.size(); ++i) {
            const bool in_pred = prediction[i] == c;
            const bool in_target = target[i] == c;
            np += in_pred;
            nt += in_target;
            overlap += (in_pred && in_target);
        }
        if (np == 0 && nt == 0) continue;  // absent from both: skipped
        const double d = 2.0 * double(overlap) / double(np + nt);
        out.per_class[std::size_t(c)] = d;
        sum += d;
        counted += 1;
    }
    out.mean = counted ? sum / counted : 0.0;
    return out;
}

}  // namespace onca
