#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "onca/loss.hpp"
#include "onca/model.hpp"
#include "onca/optim.hpp"
#include "onca/pyramid.hpp"
#include "onca/reference.hpp"
#include "onca/rng.hpp"

namespace onca {

struct TrainConfig {
    AdamConfig adam;
    double ema_alpha = 0.99;
    double lambda_dice = 1.0;
    int batch_size = 3;
    int epochs = 0;
    int batches_per_epoch = 200;
    std::map<int, std::vector<int>> patch_plan;  // level index -> patch extents
    std::uint64_t seed = 0;
    double target_val_dice = 0.0;  // early stop once the shadow model reaches it
    std::string log_csv;           // optional epoch log (epoch,loss,val_dice,lr)
};

/// One training pair held in memory: image grid plus integer class ids.
struct TrainSample {
    CellGrid image;
    std::vector<std::uint8_t> mask;
};

struct TrainData {
    std::vector<TrainSample> train;
    std::vector<TrainSample> val;
};

/// Raised when 100 draws found no foreground in the mask window; the caller
/// skips the sample.
struct NoForegroundSample : std::runtime_error {
    NoForegroundSample() : std::runtime_error("no-foreground sample") {}
};

/// Aligned patch windows for the patched (finest) levels. Origins at coarser
/// patched levels are the finest origin divided by the cumulative factors.
struct PatchSelection {
    std::map<int, std::vector<int>> origin;
    std::map<int, std::vector<int>> size;

    bool patched(int level) const { return origin.count(level) != 0; }
};

/// Draws an aligned random origin for the finest patch, rejecting windows
/// whose mask has no foreground (<= 100 tries).
PatchSelection sample_patch(const std::vector<std::uint8_t>& mask,
                            const std::vector<int>& mask_dims,
                            const PyramidSchedule& schedule,
                            const std::map<int, std::vector<int>>& patch_plan, Rng& rng);

/// Validates that the plan is a contiguous suffix of levels ending at the
/// finest, with extents that nest exactly through the level factors.
void validate_patch_plan(const PyramidSchedule& schedule,
                         const std::map<int, std::vector<int>>& patch_plan);

/// Full coarse-to-fine forward pass used by training, the gradient check and
/// the oracle tests. Records one tape per level when `tapes` is non-null.
/// Patched levels run on the selected windows.
CellGrid pyramid_forward(const OctreeModel& model, const CellGrid& image,
                         const PatchSelection& sel, std::uint64_t seed,
                         std::vector<RolloutTape>* tapes);

/// Forward + loss + full backward chain through every level and transfer.
/// Parameter gradients are accumulated into `grads` (one entry per level).
LossValue pyramid_forward_backward(const OctreeModel& model, const CellGrid& image,
                                   const std::vector<std::uint8_t>& target,
                                   const PatchSelection& sel, double lambda_dice,
                                   std::uint64_t seed, std::vector<NcaGradients>& grads);

/// Adjoint of transfer_state: sums fine-cell gradients over each coarse
/// cell's replication block (hidden channels); image channels receive zero.
CellGrid transfer_backward(const CellGrid& fine_grad, const std::vector<int>& coarse_dims,
                           const AxisFactors& factors, int image_channels);

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double val_dice = 0.0;
    double lr = 0.0;
};

struct FitResult {
    OctreeModel model;
    OctreeModel shadow;
    std::vector<EpochLog> log;
    int epochs_run = 0;
    long long optimizer_steps = 0;
    double final_lr = 0.0;
};

/// End-to-end training: per batch, forward through all levels, combined loss
/// at the finest level, backward through rollouts and transfers, Adam update,
/// EMA shadow update. Deterministic given config.seed for any worker count.
FitResult fit(OctreeModel model, const TrainData& data, const TrainConfig& config);

struct EvalResult {
    std::vector<double> per_class;  // averaged over samples where defined
    double mean_dice = 0.0;
};

EvalResult evaluate_dice(const OctreeModel& model, const std::vector<TrainSample>& samples,
                         EngineKind engine, std::uint64_t seed);

/// Checkpoint = model file + sidecar JSON (optimizer step, lr, epoch). The
/// shadow model is stored next to it with an .ema suffix.
void save_checkpoint(const std::string& path, const OctreeModel& model,
                     const OctreeModel& shadow, const AdamState& adam, int epoch);

struct GradCheckResult {
    double max_err = 0.0;     // |analytic - fd| / (max(|analytic|,|fd|) + floor)
    double max_abs_diff = 0.0;
    double max_grad = 0.0;
    std::size_t checked = 0;
};

/// Central-difference check of the analytic gradients through a 2-level
/// pyramid with transfer and combined loss on an 8x8 input.
GradCheckResult pyramid_gradcheck(std::uint64_t seed, int params_per_tensor = 6,
                                  double epsilon = 1e-3, double floor = 1e-2);

}  // namespace onca
