#pragma once

#include <cstdint>
#include <vector>

#include "onca/grid.hpp"

namespace onca {

inline constexpr double kDiceSmoothing = 1e-5;

/// Soft Dice loss on probabilities against a one-hot target, averaged over
/// classes: 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s).
double dice_loss(const float* probs, const float* target_onehot, int classes,
                 std::size_t cells);

/// Mean per-cell cross entropy on probabilities (binary for classes == 1,
/// categorical otherwise).
double bce_loss(const float* probs, const float* target_onehot, int classes,
                std::size_t cells);

/// (2 - lambda) * BCE + lambda * Dice, lambda in [0, 2].
double combined_loss(const float* probs, const float* target_onehot, int classes,
                     std::size_t cells, double lambda_dice);

struct LossValue {
    double combined = 0.0;
    double bce = 0.0;
    double dice = 0.0;
};

/// Training-path loss on the finest state: reads the trailing `classes`
/// channels as logits (sigmoid for binary, softmax otherwise), evaluates the
/// combined loss against integer class ids, and writes the gradient with
/// respect to the full state grid (zero outside the logit channels).
LossValue combined_loss_grad(const CellGrid& state, int classes,
                             const std::vector<std::uint8_t>& target_ids, double lambda_dice,
                             CellGrid& grad_out);

struct DiceScores {
    std::vector<double> per_class;  // NaN for classes absent from both masks
    double mean = 0.0;              // over classes present in either mask
};

/// Hard-mask Dice 2|P∩T| / (|P|+|T|) per class. Classes absent from both
/// prediction and target are skipped. Class 0 is treated as background and
/// excluded from the mean for multi-class tasks; binary tasks score class 1.
DiceScores hard_dice(const std::vector<std::uint8_t>& prediction,
                     const std::vector<std::uint8_t>& target, int num_classes);

}  // namespace onca
