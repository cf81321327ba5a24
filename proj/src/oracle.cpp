#include "onca/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "onca/fire.hpp"

namespace onca::oracle {

namespace {

struct Field {
    std::vector<int> dims;
    int channels = 0;
    std::vector<double> v;

    std::size_t cells() const {
        std::size_t n = 1;
        for (int d : dims) n *= std::size_t(d);
        return n;
    }
};

int dim_or(const std::vector<int>& dims, std::size_t a, int fallback) {
    return a < dims.size() ? dims[a] : fallback;
}

Field mean_pool(const Field& f, const std::vector<int>& factors) {
    const int nd = int(f.dims.size());
    Field out;
    out.channels = f.channels;
    out.dims.resize(nd);
    for (int a = 0; a < nd; ++a) out.dims[a] = (f.dims[a] + factors[a] - 1) / factors[a];
    out.v.assign(out.cells() * std::size_t(f.channels), 0.0);

    const int H = f.dims[0], W = f.dims[1], D = dim_or(f.dims, 2, 1);
    const int OH = out.dims[0], OW = out.dims[1], OD = dim_or(out.dims, 2, 1);
    const int fh = factors[0], fw = factors[1], fd = nd == 3 ? factors[2] : 1;
    const double inv = 1.0 / double(fh * fw * fd);
    const int C = f.channels;
    for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow)
            for (int od = 0; od < OD; ++od) {
                const std::size_t oc = (std::size_t(oh) * OW + ow) * OD + od;
                for (int jh = 0; jh < fh; ++jh)
                    for (int jw = 0; jw < fw; ++jw)
                        for (int jd = 0; jd < fd; ++jd) {
                            const int sh = std::min(oh * fh + jh, H - 1);
                            const int sw = std::min(ow * fw + jw, W - 1);
                            const int sd = std::min(od * fd + jd, D - 1);
                            const std::size_t sc = (std::size_t(sh) * W + sw) * D + sd;
                            for (int c = 0; c < C; ++c)
                                out.v[oc * C + c] += f.v[sc * C + c];
                        }
                for (int c = 0; c < C; ++c) out.v[oc * C + c] *= inv;
            }
    return out;
}

void rollout_inplace(Field& state, int image_channels, const NcaWeights& w, int steps,
                     std::uint64_t seed, int level, float fire_rate) {
    const int C = w.channels, H = w.hidden, K = w.kernel_taps();
    const int nd = int(state.dims.size());
    const int GH = state.dims[0], GW = state.dims[1], GD = dim_or(state.dims, 2, 1);
    const std::size_t cells = state.cells();

    std::vector<double> next(state.v.size());
    std::vector<double> v, hid, delta;
    v.resize(std::size_t(2 * C));
    hid.resize(std::size_t(H));
    delta.resize(std::size_t(C));

    for (int t = 0; t < steps; ++t) {
        const FireStream stream(seed, level, t, fire_rate);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const double* in = state.v.data() + cell * C;
            double* out = next.data() + cell * C;
            if (!stream.fires(cell)) {
                std::copy(in, in + C, out);
                continue;
            }
            const int d = int(cell % std::size_t(GD));
            const std::size_t hw = cell / std::size_t(GD);
            const int x = int(hw % std::size_t(GW));
            const int y = int(hw / std::size_t(GW));

            for (int c = 0; c < C; ++c) {
                v[std::size_t(c)] = in[c];
                v[std::size_t(C + c)] = 0.0;
            }
            for (int j = 0; j < K; ++j) {
                const int dh = nd == 2 ? j / 3 - 1 : j / 9 - 1;
                const int dw = nd == 2 ? j % 3 - 1 : (j / 3) % 3 - 1;
                const int dd = nd == 2 ? 0 : j % 3 - 1;
                const int ny = y + dh, nx = x + dw, nz = d + dd;
                if (ny < 0 || ny >= GH || nx < 0 || nx >= GW || nz < 0 || nz >= GD) continue;
                const double* src = state.v.data() + ((std::size_t(ny) * GW + nx) * GD + nz) * C;
                for (int c = 0; c < C; ++c)
                    v[std::size_t(C + c)] += double(w.conv[std::size_t(c) * K + j]) * src[c];
            }
            for (int i = 0; i < H; ++i) {
                double z = double(w.b1[std::size_t(i)]);
                for (int j = 0; j < 2 * C; ++j)
                    z += v[std::size_t(j)] * double(w.w1[std::size_t(j) * H + i]);
                hid[std::size_t(i)] = z > 0.0 ? z : 0.0;
            }
            for (int c = 0; c < C; ++c) delta[std::size_t(c)] = 0.0;
            for (int i = 0; i < H; ++i) {
                const double hi = hid[std::size_t(i)];
                for (int c = 0; c < C; ++c)
                    delta[std::size_t(c)] += hi * double(w.w2[std::size_t(i) * C + c]);
            }
            for (int c = 0; c < C; ++c) out[c] = in[c] + delta[std::size_t(c)];
            for (int c = 0; c < image_channels; ++c) out[c] = in[c];
        }
        state.v.swap(next);
    }
}

}  // namespace

std::vector<double> rollout_f64(const std::vector<int>& dims, int image_channels,
                                const std::vector<double>& state0, const NcaWeights& w,
                                int steps, std::uint64_t seed, int level, float fire_rate) {
    Field f;
    f.dims = dims;
    f.channels = w.channels;
    f.v = state0;
    rollout_inplace(f, image_channels, w, steps, seed, level, fire_rate);
    return f.v;
}

double pyramid_loss(const OctreeModel& model, const CellGrid& image,
                    const std::vector<std::uint8_t>& target, double lambda_dice,
                    std::uint64_t seed) {
    const PyramidSchedule schedule =
        build_schedule(image.dims(), model.schedule.num_levels(), model.schedule.min_extent,
                       model.schedule.alpha0, model.schedule.refine_steps);
    const int L = schedule.num_levels();
    const int C = model.channels();
    const int n = model.image_channels;
    const int classes = model.num_classes;

    // Image pyramid in f64, coarsest first.
    std::vector<Field> pyr;
    pyr.resize(std::size_t(L));
    {
        Field fine;
        fine.dims = image.dims();
        fine.channels = image.channels();
        fine.v.assign(image.data(), image.data() + image.size());
        pyr[std::size_t(L) - 1] = std::move(fine);
        for (int l = L - 1; l > 0; --l)
            pyr[std::size_t(l) - 1] =
                mean_pool(pyr[std::size_t(l)], schedule.levels[std::size_t(l) - 1].factors_to_finer);
    }

    // Seed, then roll out level by level with nearest-neighbor transfer.
    Field state;
    state.dims = pyr[0].dims;
    state.channels = C;
    state.v.assign(state.cells() * std::size_t(C), 0.0);
    for (std::size_t cell = 0; cell < state.cells(); ++cell)
        for (int c = 0; c < n; ++c) state.v[cell * C + c] = pyr[0].v[cell * n + c];

    for (int l = 0; l < L; ++l) {
        if (l > 0) {
            const auto& f = schedule.levels[std::size_t(l) - 1].factors_to_finer;
            const Field& img = pyr[std::size_t(l)];
            Field up;
            up.dims = img.dims;
            up.channels = C;
            up.v.assign(up.cells() * std::size_t(C), 0.0);
            const int nd = int(up.dims.size());
            const int UW = up.dims[1], UD = dim_or(up.dims, 2, 1);
            const int SW = state.dims[1], SD = dim_or(state.dims, 2, 1);
            for (int h = 0; h < up.dims[0]; ++h)
                for (int w = 0; w < UW; ++w)
                    for (int d = 0; d < UD; ++d) {
                        const std::size_t uc = (std::size_t(h) * UW + w) * UD + d;
                        const int sh = h / f[0], sw = w / f[1];
                        const int sd = nd == 3 ? d / f[2] : 0;
                        const std::size_t sc = (std::size_t(sh) * SW + sw) * SD + sd;
                        for (int c = 0; c < C; ++c) up.v[uc * C + c] = state.v[sc * C + c];
                        for (int c = 0; c < n; ++c) up.v[uc * C + c] = img.v[uc * std::size_t(n) + c];
                    }
            state = std::move(up);
        }
        rollout_inplace(state, n, model.levels[std::size_t(l)],
                        schedule.levels[std::size_t(l)].steps, seed, l, model.fire_rate);
    }

    // Combined loss on the trailing logit channels.
    const std::size_t cells = state.cells();
    const int first_logit = C - classes;
    double bce = 0.0, dice = 0.0;
    if (classes == 1) {
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        for (std::size_t i = 0; i < cells; ++i) {
            const double x = state.v[i * C + first_logit];
            const double t = target[i] ? 1.0 : 0.0;
            bce += std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))) + (1.0 - t) * x;
            const double p = 1.0 / (1.0 + std::exp(-x));
            inter += p * t;
            psum += p;
            tsum += t;
        }
        bce /= double(cells);
        dice = 1.0 - (2.0 * inter + 1e-5) / (psum + tsum + 1e-5);
    } else {
        std::vector<double> inter(classes, 0.0), psum(classes, 0.0), tsum(classes, 0.0);
        for (std::size_t i = 0; i < cells; ++i) {
            const double* x = state.v.data() + i * C + first_logit;
            double xmax = x[0];
            for (int c = 1; c < classes; ++c) xmax = std::max(xmax, x[c]);
            double z = 0.0;
            for (int c = 0; c < classes; ++c) z += std::exp(x[c] - xmax);
            const int tid = target[i];
            bce += std::log(z) + xmax - x[tid];
            for (int c = 0; c < classes; ++c) {
                const double pc = std::exp(x[c] - xmax) / z;
                inter[c] += pc * (c == tid ? 1.0 : 0.0);
                psum[c] += pc;
                tsum[c] += c == tid ? 1.0 : 0.0;
            }
        }
        bce /= double(cells);
        for (int c = 0; c < classes; ++c)
            dice += 1.0 - (2.0 * inter[c] + 1e-5) / (psum[c] + tsum[c] + 1e-5);
        dice /= classes;
    }
    return (2.0 - lambda_dice) * bce + lambda_dice * dice;
}

double fd_param_grad(const OctreeModel& model, const CellGrid& image,
                     const std::vector<std::uint8_t>& target, double lambda_dice,
                     std::uint64_t seed, int level, int tensor, std::size_t index,
                     double epsilon) {
    OctreeModel probe = model;
    std::vector<float>& t = weights_tensor(probe.levels[std::size_t(level)], tensor);
    const float saved = t[index];
    const float plus = float(double(saved) + epsilon);
    const float minus = float(double(saved) - epsilon);
    t[index] = plus;
    const double lp = pyramid_loss(probe, image, target, lambda_dice, seed);
    t[index] = minus;
    const double lm = pyramid_loss(probe, image, target, lambda_dice, seed);
    return (lp - lm) / (double(plus) - double(minus));
}

}  // namespace onca::oracle
