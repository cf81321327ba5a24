#include "onca/reference.hpp"

#include <algorithm>
#include <array>
#include <cstring>

#include "onca/fire.hpp"
#include "onca/parallel.hpp"

namespace onca {

std::vector<std::array<int, 3>> kernel_offsets(int ndim) {
    std::vector<std::array<int, 3>> offs;
    if (ndim == 2) {
        for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) offs.push_back({dh, dw, 0});
    } else {
        for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw)
                for (int dd = -1; dd <= 1; ++dd) offs.push_back({dh, dw, dd});
    }
    return offs;
}

namespace {

struct GridGeom {
    int nd, H, W, D;

    explicit GridGeom(const std::vector<int>& dims)
        : nd(int(dims.size())), H(dims[0]), W(dims[1]), D(nd == 3 ? dims[2] : 1) {}

    void coords(std::size_t cell, int& h, int& w, int& d) const {
        d = int(cell % std::size_t(D));
        const std::size_t hw = cell / std::size_t(D);
        w = int(hw % std::size_t(W));
        h = int(hw / std::size_t(W));
    }

    // Flat index of the neighbor, or -1 when the tap falls outside (zero pad).
    std::ptrdiff_t neighbor(int h, int w, int d, const std::array<int, 3>& off) const {
        const int nh = h + off[0];
        const int nw = w + off[1];
        const int ndd = d + off[2];
        if (nh < 0 || nh >= H || nw < 0 || nw >= W || ndd < 0 || ndd >= D) return -1;
        return (std::ptrdiff_t(nh) * W + nw) * D + ndd;
    }
};

// conv transposed to tap-major [K][C] so the channel loop vectorizes.
std::vector<float> transpose_kernel(const NcaWeights& w) {
    const int C = w.channels, K = w.kernel_taps();
    std::vector<float> kt(std::size_t(K) * C);
    for (int c = 0; c < C; ++c)
        for (int j = 0; j < K; ++j) kt[std::size_t(j) * C + c] = w.conv[std::size_t(c) * K + j];
    return kt;
}

}  // namespace

TrackedVec<std::uint8_t> make_fire_mask(std::size_t cells, std::uint64_t seed, int level,
                                        int step, float fire_rate) {
    TrackedVec<std::uint8_t> mask(cells, AllocClass::transient, "fire_mask");
    const FireStream stream(seed, level, step, fire_rate);
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell) mask[cell] = stream.fires(cell) ? 1 : 0;
    });
    return mask;
}

CellGrid nca_step_reference(const CellGrid& state, const NcaWeights& w,
                            const TrackedVec<std::uint8_t>& fire_mask) {
    if (state.channels() != w.channels)
        throw std::invalid_argument("nca_step_reference: channel mismatch");
    if (state.ndim() != w.ndim)
        throw std::invalid_argument("nca_step_reference: rank mismatch");
    if (fire_mask.size() != state.cells())
        throw std::invalid_argument("nca_step_reference: mask size mismatch");

    const int C = w.channels, H = w.hidden, K = w.kernel_taps();
    const int n = state.image_channels();
    const std::size_t cells = state.cells();
    const GridGeom geom(state.dims());
    const auto offs = kernel_offsets(w.ndim);
    const std::vector<float> kt = transpose_kernel(w);

    // Layer-wise whole-grid intermediates, mirroring a framework forward pass.
    TrackedVec<float> perception(cells * C, AllocClass::transient, "conv_output");
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        int h, ww, d;
        for (std::size_t cell = b; cell < e; ++cell) {
            geom.coords(cell, h, ww, d);
            float* p = perception.data() + cell * C;
            for (int j = 0; j < K; ++j) {
                const std::ptrdiff_t nb = geom.neighbor(h, ww, d, offs[j]);
                if (nb < 0) continue;
                const float* src = state.data() + std::size_t(nb) * C;
                const float* kj = kt.data() + std::size_t(j) * C;
                for (int c = 0; c < C; ++c) p[c] += kj[c] * src[c];
            }
        }
    });

    TrackedVec<float> concat(cells * 2 * C, AllocClass::transient, "concat");
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell) {
            float* v = concat.data() + cell * 2 * C;
            std::memcpy(v, state.data() + cell * C, sizeof(float) * C);
            std::memcpy(v + C, perception.data() + cell * C, sizeof(float) * C);
        }
    });

    TrackedVec<float> hidden(cells * H, AllocClass::transient, "hidden");
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell) {
            float* z = hidden.data() + cell * H;
            std::memcpy(z, w.b1.data(), sizeof(float) * H);
            const float* v = concat.data() + cell * 2 * C;
            for (int j = 0; j < 2 * C; ++j) {
                const float vj = v[j];
                const float* row = w.w1.data() + std::size_t(j) * H;
                for (int i = 0; i < H; ++i) z[i] += vj * row[i];
            }
            for (int i = 0; i < H; ++i) z[i] = z[i] > 0.0f ? z[i] : 0.0f;
        }
    });

    TrackedVec<float> update(cells * C, AllocClass::transient, "update");
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell) {
            float* du = update.data() + cell * C;
            const float* hvec = hidden.data() + cell * H;
            for (int i = 0; i < H; ++i) {
                const float hi = hvec[i];
                const float* row = w.w2.data() + std::size_t(i) * C;
                for (int c = 0; c < C; ++c) du[c] += hi * row[c];
            }
        }
    });

    CellGrid next(state.shape(), n, AllocClass::transient, "state_next");
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell) {
            const float* in = state.data() + cell * C;
            float* out = next.data() + cell * C;
            if (fire_mask[cell]) {
                const float* du = update.data() + cell * C;
                for (int c = 0; c < C; ++c) out[c] = in[c] + du[c];
            } else {
                std::memcpy(out, in, sizeof(float) * C);
            }
            // Image channels stay the constant input.
            for (int c = 0; c < n; ++c) out[c] = in[c];
        }
    });
    return next;
}

CellGrid rollout_reference(CellGrid state, const NcaWeights& w, int steps,
                           std::uint64_t seed, int level, float fire_rate,
                           int step_offset, RolloutTape* tape) {
    if (steps < 0) throw std::invalid_argument("rollout_reference: steps must be >= 0");
    if (tape) {
        tape->level = level;
        tape->seed = seed;
        tape->step_offset = step_offset;
        tape->fire_rate = fire_rate;
    }
    const std::size_t cells = state.cells();
    const int H = w.hidden;
    for (int t = 0; t < steps; ++t) {
        TrackedVec<std::uint8_t> mask =
            make_fire_mask(cells, seed, level, step_offset + t, fire_rate);
        CellGrid next = nca_step_reference(state, w, mask);
        if (tape) {
            // The recomputation-free tape: input state, hidden pre-activation,
            // and mask. The pre-activation is rebuilt here rather than plumbed
            // out of the step so the inference path stays allocation-minimal.
            TrackedVec<float> preact(cells * H, AllocClass::persistent, "tape_preact");
            const int C = w.channels, K = w.kernel_taps();
            const GridGeom geom(state.dims());
            const auto offs = kernel_offsets(w.ndim);
            const std::vector<float> kt = transpose_kernel(w);
            par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
                int h, ww, d;
                std::vector<float> v(2 * C);
                for (std::size_t cell = b; cell < e; ++cell) {
                    geom.coords(cell, h, ww, d);
                    std::memcpy(v.data(), state.data() + cell * C, sizeof(float) * C);
                    std::fill(v.begin() + C, v.end(), 0.0f);
                    for (int j = 0; j < K; ++j) {
                        const std::ptrdiff_t nb = geom.neighbor(h, ww, d, offs[j]);
                        if (nb < 0) continue;
                        const float* src = state.data() + std::size_t(nb) * C;
                        const float* kj = kt.data() + std::size_t(j) * C;
                        for (int c = 0; c < C; ++c) v[C + c] += kj[c] * src[c];
                    }
                    float* z = preact.data() + cell * H;
                    std::memcpy(z, w.b1.data(), sizeof(float) * H);
                    for (int j = 0; j < 2 * C; ++j) {
                        const float vj = v[j];
                        const float* row = w.w1.data() + std::size_t(j) * H;
                        for (int i = 0; i < H; ++i) z[i] += vj * row[i];
                    }
                }
            });
            mask.reclass(AllocClass::persistent);
            state.reclass(AllocClass::persistent);
            tape->states.push_back(std::move(state));
            tape->preacts.push_back(std::move(preact));
            tape->masks.push_back(std::move(mask));
        }
        next.reclass(AllocClass::persistent);
        state = std::move(next);
    }
    return state;
}

void NcaGradients::add_scaled(const NcaGradients& o, double s) {
    for (std::size_t i = 0; i < conv.size(); ++i) conv[i] += s * o.conv[i];
    for (std::size_t i = 0; i < w1.size(); ++i) w1[i] += s * o.w1[i];
    for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += s * o.b1[i];
    for (std::size_t i = 0; i < w2.size(); ++i) w2[i] += s * o.w2[i];
}

void NcaGradients::scale(double s) {
    for (auto& v : conv) v *= s;
    for (auto& v : w1) v *= s;
    for (auto& v : b1) v *= s;
    for (auto& v : w2) v *= s;
}

double* NcaGradients::tensor(int which) {
    switch (which) {
        case 0: return conv.data();
        case 1: return w1.data();
        case 2: return b1.data();
        default: return w2.data();
    }
}

const double* NcaGradients::tensor(int which) const {
    return const_cast<NcaGradients*>(this)->tensor(which);
}

std::size_t NcaGradients::tensor_size(int which) const {
    switch (which) {
        case 0: return conv.size();
        case 1: return w1.size();
        case 2: return b1.size();
        default: return w2.size();
    }
}

std::vector<float>& weights_tensor(NcaWeights& w, int which) {
    switch (which) {
        case 0: return w.conv;
        case 1: return w.w1;
        case 2: return w.b1;
        default: return w.w2;
    }
}

const std::vector<float>& weights_tensor(const NcaWeights& w, int which) {
    return weights_tensor(const_cast<NcaWeights&>(w), which);
}

namespace {

// Per-block partial parameter gradients; blocks are combined in ascending
// order so the reduction is independent of the worker count.
struct PartialGrads {
    std::vector<double> conv, w1, b1, w2;

    explicit PartialGrads(const NcaWeights& w)
        : conv(w.conv.size(), 0.0), w1(w.w1.size(), 0.0), b1(w.b1.size(), 0.0),
          w2(w.w2.size(), 0.0) {}
};

}  // namespace

CellGrid backward_rollout(const RolloutTape& tape, const CellGrid& out_grad,
                          const NcaWeights& w, NcaGradients& grads) {
    const int steps = tape.steps();
    if (steps == 0) return out_grad;
    if (out_grad.shape() != tape.states.back().shape())
        throw std::invalid_argument("backward_rollout: gradient shape mismatch");

    const int C = w.channels, H = w.hidden, K = w.kernel_taps();
    const int n = tape.states.front().image_channels();
    const std::size_t cells = out_grad.cells();
    const GridGeom geom(out_grad.dims());
    const auto offs = kernel_offsets(w.ndim);

    CellGrid g = out_grad;  // gradient w.r.t. the state after step t
    const std::size_t nblocks = (cells + par::kReduceBlock - 1) / par::kReduceBlock;

    for (int t = steps - 1; t >= 0; --t) {
        const CellGrid& s = tape.states[std::size_t(t)];
        const TrackedVec<float>& preact = tape.preacts[std::size_t(t)];
        const TrackedVec<std::uint8_t>& mask = tape.masks[std::size_t(t)];

        // Clamp: image channels of the step output are the constant image.
        par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
            for (std::size_t cell = b; cell < e; ++cell)
                for (int c = 0; c < n; ++c) g.at(cell, c) = 0.0f;
        });

        CellGrid g_prev(s.shape(), n, AllocClass::transient, "grad_state");
        TrackedVec<float> g_perc(cells * C, AllocClass::transient, "grad_perception");
        std::vector<PartialGrads> partials(nblocks, PartialGrads(w));

        par::for_ranges(nblocks, [&](std::size_t bb, std::size_t be) {
            std::vector<float> v(2 * C), g_z(H);
            int h, ww, d;
            for (std::size_t blk = bb; blk < be; ++blk) {
                PartialGrads& pg = partials[blk];
                const std::size_t lo = blk * par::kReduceBlock;
                const std::size_t hi = std::min(cells, lo + par::kReduceBlock);
                for (std::size_t cell = lo; cell < hi; ++cell) {
                    const float* gup = g.data() + cell * C;
                    const std::uint8_t fired = mask[cell];
                    const float* z = preact.data() + cell * H;

                    // v = [state, perception], recomputed from the taped state.
                    geom.coords(cell, h, ww, d);
                    std::memcpy(v.data(), s.data() + cell * C, sizeof(float) * C);
                    std::fill(v.begin() + C, v.end(), 0.0f);
                    for (int j = 0; j < K; ++j) {
                        const std::ptrdiff_t nb = geom.neighbor(h, ww, d, offs[j]);
                        if (nb < 0) continue;
                        const float* src = s.data() + std::size_t(nb) * C;
                        for (int c = 0; c < C; ++c)
                            v[std::size_t(C + c)] += w.conv[std::size_t(c) * K + j] * src[c];
                    }

                    // Update-path gradient; the fire mask gates it.
                    // g_delta = fired ? gup : 0.
                    if (fired) {
                        for (int i = 0; i < H; ++i) {
                            const float hi_v = z[i] > 0.0f ? z[i] : 0.0f;
                            const float* row = w.w2.data() + std::size_t(i) * C;
                            double acc = 0.0;
                            double* gw2row = pg.w2.data() + std::size_t(i) * C;
                            for (int c = 0; c < C; ++c) {
                                gw2row[c] += double(hi_v) * double(gup[c]);
                                acc += double(row[c]) * double(gup[c]);
                            }
                            g_z[i] = z[i] > 0.0f ? float(acc) : 0.0f;
                        }
                        for (int i = 0; i < H; ++i) pg.b1[i] += double(g_z[i]);
                        for (int j = 0; j < 2 * C; ++j) {
                            double* gw1row = pg.w1.data() + std::size_t(j) * H;
                            const double vj = double(v[std::size_t(j)]);
                            for (int i = 0; i < H; ++i) gw1row[i] += vj * double(g_z[i]);
                        }
                        float* gp = g_perc.data() + cell * C;
                        float* go = g_prev.data() + cell * C;
                        for (int c = 0; c < C; ++c) {
                            double acc_s = 0.0, acc_p = 0.0;
                            for (int i = 0; i < H; ++i) {
                                acc_s += double(w.w1[std::size_t(c) * H + i]) * double(g_z[i]);
                                acc_p += double(w.w1[std::size_t(C + c) * H + i]) * double(g_z[i]);
                            }
                            go[c] = gup[c] + float(acc_s);
                            gp[c] = float(acc_p);
                        }
                    } else {
                        std::memcpy(g_prev.data() + cell * C, gup, sizeof(float) * C);
                        std::memset(g_perc.data() + cell * C, 0, sizeof(float) * C);
                    }
                }
            }
        });

        // Conv path: weight gradient and the transposed-correlation term that
        // scatters g_perception back onto the neighborhood.
        par::for_ranges(nblocks, [&](std::size_t bb, std::size_t be) {
            int h, ww, d;
            for (std::size_t blk = bb; blk < be; ++blk) {
                PartialGrads& pg = partials[blk];
                const std::size_t lo = blk * par::kReduceBlock;
                const std::size_t hi = std::min(cells, lo + par::kReduceBlock);
                for (std::size_t cell = lo; cell < hi; ++cell) {
                    geom.coords(cell, h, ww, d);
                    const float* gp = g_perc.data() + cell * C;
                    for (int j = 0; j < K; ++j) {
                        const std::ptrdiff_t nb = geom.neighbor(h, ww, d, offs[j]);
                        if (nb < 0) continue;
                        const float* src = s.data() + std::size_t(nb) * C;
                        for (int c = 0; c < C; ++c)
                            pg.conv[std::size_t(c) * K + j] += double(gp[c]) * double(src[c]);
                    }
                }
            }
        });
        par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
            int h, ww, d;
            for (std::size_t cell = b; cell < e; ++cell) {
                geom.coords(cell, h, ww, d);
                float* go = g_prev.data() + cell * C;
                for (int j = 0; j < K; ++j) {
                    // P[x] reads S[x + off_j], so S[y] feeds P[y - off_j].
                    const std::array<int, 3> neg{-offs[j][0], -offs[j][1], -offs[j][2]};
                    const std::ptrdiff_t nb = geom.neighbor(h, ww, d, neg);
                    if (nb < 0) continue;
                    const float* gp = g_perc.data() + std::size_t(nb) * C;
                    for (int c = 0; c < C; ++c)
                        go[c] += w.conv[std::size_t(c) * K + j] * gp[c];
                }
            }
        });

        for (const PartialGrads& pg : partials) {
            for (std::size_t i = 0; i < pg.conv.size(); ++i) grads.conv[i] += pg.conv[i];
            for (std::size_t i = 0; i < pg.w1.size(); ++i) grads.w1[i] += pg.w1[i];
            for (std::size_t i = 0; i < pg.b1.size(); ++i) grads.b1[i] += pg.b1[i];
            for (std::size_t i = 0; i < pg.w2.size(); ++i) grads.w2[i] += pg.w2[i];
        }
        g = std::move(g_prev);
    }
    return g;
}

std::vector<double> finite_diff_grad(
    const CellGrid& state, const NcaWeights& w, int steps, std::uint64_t seed, int level,
    float fire_rate, const std::function<double(const CellGrid&)>& loss,
    const std::vector<ParamRef>& params, double epsilon) {
    if (epsilon <= 0.0) throw std::invalid_argument("finite_diff_grad: epsilon must be > 0");
    std::vector<double> out;
    out.reserve(params.size());
    NcaWeights probe = w;
    for (const ParamRef& p : params) {
        std::vector<float>& tensor = weights_tensor(probe, p.tensor);
        const float saved = tensor[p.index];
        const float plus = float(double(saved) + epsilon);
        const float minus = float(double(saved) - epsilon);

        tensor[p.index] = plus;
        const double lp = loss(rollout_reference(state, probe, steps, seed, level, fire_rate));
        tensor[p.index] = minus;
        const double lm = loss(rollout_reference(state, probe, steps, seed, level, fire_rate));
        tensor[p.index] = saved;

        out.push_back((lp - lm) / (double(plus) - double(minus)));
    }
    return out;
}

}  // namespace onca
