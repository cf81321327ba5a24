#include "onca/fused.hpp"

#include <array>
#include <cstring>

#include "onca/fire.hpp"
#include "onca/memtrack.hpp"
#include "onca/parallel.hpp"
#include "onca/reference.hpp"

namespace onca {

namespace {

struct CellGeom {
    int nd, H, W, D;

    explicit CellGeom(const std::vector<int>& dims)
        : nd(int(dims.size())), H(dims[0]), W(dims[1]), D(nd == 3 ? dims[2] : 1) {}
};

// One full update for one cell. scratch holds [v(2C) | h(H)]; after the
// hidden layer the perception half of v is reused for the additive update so
// the working set stays exactly 2C + H floats.
template <int C, int H>
inline void cell_update(const float* front, float* back, const float* kt, const float* w1,
                        const float* b1, const float* w2, float* scratch, std::size_t cell,
                        const CellGeom& g, const std::array<int, 3>* offs, int taps,
                        int img_ch) {
    float* v = scratch;
    float* h = scratch + 2 * C;

    const float* in = front + cell * C;
    std::memcpy(v, in, sizeof(float) * C);
    for (int c = 0; c < C; ++c) v[C + c] = 0.0f;

    const int d = int(cell % std::size_t(g.D));
    const std::size_t hw = cell / std::size_t(g.D);
    const int w_ = int(hw % std::size_t(g.W));
    const int h_ = int(hw / std::size_t(g.W));
    for (int j = 0; j < taps; ++j) {
        const int nh = h_ + offs[j][0];
        const int nw = w_ + offs[j][1];
        const int nd2 = d + offs[j][2];
        if (nh < 0 || nh >= g.H || nw < 0 || nw >= g.W || nd2 < 0 || nd2 >= g.D) continue;
        const float* src = front + ((std::size_t(nh) * g.W + nw) * g.D + nd2) * C;
        const float* kj = kt + std::size_t(j) * C;
        for (int c = 0; c < C; ++c) v[C + c] += kj[c] * src[c];
    }

    std::memcpy(h, b1, sizeof(float) * H);
    for (int j = 0; j < 2 * C; ++j) {
        const float vj = v[j];
        const float* row = w1 + std::size_t(j) * H;
        for (int i = 0; i < H; ++i) h[i] += vj * row[i];
    }
    for (int i = 0; i < H; ++i) h[i] = h[i] > 0.0f ? h[i] : 0.0f;

    float* delta = v + C;  // perception values are dead past this point
    for (int c = 0; c < C; ++c) delta[c] = 0.0f;
    for (int i = 0; i < H; ++i) {
        const float hi = h[i];
        const float* row = w2 + std::size_t(i) * C;
        for (int c = 0; c < C; ++c) delta[c] += hi * row[c];
    }

    float* out = back + cell * C;
    for (int c = 0; c < C; ++c) out[c] = v[c] + delta[c];
    for (int c = 0; c < img_ch; ++c) out[c] = v[c];
}

// Same code with runtime dimensions; used when the engine is not built for
// the requested (C, hidden).
inline void cell_update_generic(const float* front, float* back, const float* kt,
                                const float* w1, const float* b1, const float* w2,
                                float* scratch, std::size_t cell, const CellGeom& g,
                                const std::array<int, 3>* offs, int taps, int img_ch,
                                int C, int H) {
    float* v = scratch;
    float* h = scratch + 2 * C;

    const float* in = front + cell * std::size_t(C);
    std::memcpy(v, in, sizeof(float) * C);
    for (int c = 0; c < C; ++c) v[C + c] = 0.0f;

    const int d = int(cell % std::size_t(g.D));
    const std::size_t hw = cell / std::size_t(g.D);
    const int w_ = int(hw % std::size_t(g.W));
    const int h_ = int(hw / std::size_t(g.W));
    for (int j = 0; j < taps; ++j) {
        const int nh = h_ + offs[j][0];
        const int nw = w_ + offs[j][1];
        const int nd2 = d + offs[j][2];
        if (nh < 0 || nh >= g.H || nw < 0 || nw >= g.W || nd2 < 0 || nd2 >= g.D) continue;
        const float* src = front + ((std::size_t(nh) * g.W + nw) * g.D + nd2) * std::size_t(C);
        const float* kj = kt + std::size_t(j) * C;
        for (int c = 0; c < C; ++c) v[C + c] += kj[c] * src[c];
    }

    std::memcpy(h, b1, sizeof(float) * H);
    for (int j = 0; j < 2 * C; ++j) {
        const float vj = v[j];
        const float* row = w1 + std::size_t(j) * H;
        for (int i = 0; i < H; ++i) h[i] += vj * row[i];
    }
    for (int i = 0; i < H; ++i) h[i] = h[i] > 0.0f ? h[i] : 0.0f;

    float* delta = v + C;
    for (int c = 0; c < C; ++c) delta[c] = 0.0f;
    for (int i = 0; i < H; ++i) {
        const float hi = h[i];
        const float* row = w2 + std::size_t(i) * C;
        for (int c = 0; c < C; ++c) delta[c] += hi * row[c];
    }

    float* out = back + cell * std::size_t(C);
    for (int c = 0; c < C; ++c) out[c] = v[c] + delta[c];
    for (int c = 0; c < img_ch; ++c) out[c] = v[c];
}

}  // namespace

FusedEngine::FusedEngine(int ndim, int channels, int hidden)
    : ndim_(ndim), channels_(channels), hidden_(hidden),
      specialized_(channels == 16 && hidden == 64) {
    if (ndim < 2 || ndim > 3 || channels < 1 || hidden < 1)
        throw std::invalid_argument("fused engine: bad dimensions");
}

void FusedEngine::step(DoubleBuffer& buffers, const NcaWeights& w, std::uint64_t seed,
                       int level, int step, float fire_rate) const {
    if (w.channels != channels_ || w.hidden != hidden_ || w.ndim != ndim_)
        throw std::invalid_argument("fused engine: weights do not match the specialization");
    if (buffers.front.shape() != buffers.back.shape())
        throw std::invalid_argument("fused engine: buffer shape mismatch");
    if (buffers.front.channels() != channels_)
        throw std::invalid_argument("fused engine: buffer channel mismatch");

    const int C = channels_, H = hidden_, K = w.kernel_taps();
    const int img_ch = buffers.front.image_channels();
    const std::size_t cells = buffers.front.cells();
    const CellGeom geom(buffers.front.dims());
    const auto offs = kernel_offsets(ndim_);

    // Tap-major kernel copy, shared across workers.
    std::vector<float> kt(std::size_t(K) * C);
    for (int c = 0; c < C; ++c)
        for (int j = 0; j < K; ++j) kt[std::size_t(j) * C + c] = w.conv[std::size_t(c) * K + j];

    const FireStream stream(seed, level, step, fire_rate);
    const std::size_t scratch_floats = std::size_t(2 * C + H);
    MemoryTracker::instance().note_worker_scratch(scratch_floats);

    const float* front = buffers.front.data();
    float* back = buffers.back.data();
    const bool fast = specialized_;

    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        TrackedVec<float> scratch(scratch_floats, AllocClass::transient, "worker_scratch");
        for (std::size_t cell = b; cell < e; ++cell) {
            if (!stream.fires(cell)) {
                std::memcpy(back + cell * C, front + cell * C, sizeof(float) * C);
                continue;
            }
            if (fast) {
                cell_update<16, 64>(front, back, kt.data(), w.w1.data(), w.b1.data(),
                                    w.w2.data(), scratch.data(), cell, geom, offs.data(), K,
                                    img_ch);
            } else {
                cell_update_generic(front, back, kt.data(), w.w1.data(), w.b1.data(),
                                    w.w2.data(), scratch.data(), cell, geom, offs.data(), K,
                                    img_ch, C, H);
            }
        }
    });
}

CellGrid FusedEngine::rollout(CellGrid state, const NcaWeights& w, int steps,
                              std::uint64_t seed, int level, float fire_rate,
                              int step_offset) const {
    if (steps < 0) throw std::invalid_argument("fused rollout: steps must be >= 0");
    if (steps == 0) return state;
    if (state.channels() != channels_)
        throw std::invalid_argument("fused rollout: state channel mismatch");

    DoubleBuffer buf;
    buf.front = std::move(state);
    buf.back = CellGrid(buf.front.shape(), buf.front.image_channels(),
                        AllocClass::persistent, "back_buffer");
    for (int t = 0; t < steps; ++t) {
        step(buf, w, seed, level, step_offset + t, fire_rate);
        buf.swap();
    }
    return std::move(buf.front);
}

}  // namespace onca
