#include "onca/pyramid.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "onca/parallel.hpp"
#include "onca/reference.hpp"

namespace onca {

CellGrid transfer_state(const CellGrid& coarse_state, const CellGrid& fine_image,
                        const AxisFactors& factors) {
    const int n = coarse_state.image_channels();
    if (fine_image.channels() != n)
        throw std::invalid_argument("transfer_state: image channel mismatch");

    CellGrid up = nn_upsample(coarse_state, factors, fine_image.dims());
    const int C = up.channels();
    const std::size_t cells = up.cells();
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell) {
            float* dst = up.data() + cell * C;
            const float* src = fine_image.data() + cell * n;
            for (int c = 0; c < n; ++c) dst[c] = src[c];
        }
    });
    return up;
}

std::vector<CellGrid> build_image_pyramid(const CellGrid& image,
                                          const PyramidSchedule& schedule) {
    const int L = schedule.num_levels();
    std::vector<CellGrid> pyr;
    pyr.resize(std::size_t(L));
    pyr[std::size_t(L) - 1] = image;
    for (int l = L - 1; l > 0; --l) {
        const AxisFactors f(schedule.levels[std::size_t(l) - 1].factors_to_finer);
        pyr[std::size_t(l) - 1] = avg_downsample(pyr[std::size_t(l)], f);
        if (pyr[std::size_t(l) - 1].dims() != schedule.levels[std::size_t(l) - 1].extents)
            throw std::logic_error("build_image_pyramid: extents drifted from the schedule");
    }
    return pyr;
}

CellGrid run_level(CellGrid state, const NcaWeights& w, int steps, std::uint64_t seed,
                   int level, float fire_rate, EngineKind engine) {
    if (engine == EngineKind::fused) {
        const FusedEngine eng(w.ndim, w.channels, w.hidden);
        return eng.rollout(std::move(state), w, steps, seed, level, fire_rate);
    }
    return rollout_reference(std::move(state), w, steps, seed, level, fire_rate);
}

SegmentationResult segment(const CellGrid& image, const OctreeModel& model,
                           EngineKind engine, std::uint64_t seed) {
    if (image.channels() != model.image_channels)
        throw std::invalid_argument("segment: image channels do not match the model");
    if (image.ndim() != model.ndim())
        throw std::invalid_argument("segment: image rank does not match the model");

    MemoryTracker& tracker = MemoryTracker::instance();
    const bool own_session = !tracker.session_active();
    if (own_session) tracker.begin_session();

    const PyramidSchedule schedule =
        build_schedule(image.dims(), model.schedule.num_levels(), model.schedule.min_extent,
                       model.schedule.alpha0, model.schedule.refine_steps);
    const int L = schedule.num_levels();
    const int C = model.channels();
    const int classes = model.num_classes;

    const std::vector<CellGrid> pyramid = build_image_pyramid(image, schedule);

    SegmentationResult result;
    result.level_seconds.resize(std::size_t(L), 0.0);

    CellGrid state = seed_from_image(pyramid[0], C);
    for (int l = 0; l < L; ++l) {
        if (l > 0) {
            const AxisFactors f(schedule.levels[std::size_t(l) - 1].factors_to_finer);
            state = transfer_state(state, pyramid[std::size_t(l)], f);
        }
        const auto t0 = std::chrono::steady_clock::now();
        state = run_level(std::move(state), model.levels[std::size_t(l)],
                          schedule.levels[std::size_t(l)].steps, seed, l, model.fire_rate,
                          engine);
        const auto t1 = std::chrono::steady_clock::now();
        result.level_seconds[std::size_t(l)] = std::chrono::duration<double>(t1 - t0).count();
    }

    result.dims = state.dims();
    const std::size_t cells = state.cells();
    result.logits = CellGrid(GridShape{state.dims(), classes}, 0,
                             AllocClass::persistent, "logits");
    result.mask.assign(cells, 0);
    const int first_logit = C - classes;
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell) {
            const float* s = state.data() + cell * C + first_logit;
            float* lg = result.logits.data() + cell * classes;
            std::memcpy(lg, s, sizeof(float) * classes);
            if (classes == 1) {
                // sigmoid(x) > 0.5 <=> x > 0
                result.mask[cell] = s[0] > 0.0f ? 1 : 0;
            } else {
                int best = 0;
                for (int c = 1; c < classes; ++c)
                    if (s[c] > s[best]) best = c;
                result.mask[cell] = std::uint8_t(best);
            }
        }
    });

    if (own_session) result.memory = tracker.end_session(cells);
    return result;
}

}  // namespace onca
