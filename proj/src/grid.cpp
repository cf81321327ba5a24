#include "onca/grid.hpp"

#include <cmath>
#include <cstring>

#include "onca/parallel.hpp"

namespace onca {

namespace {

// Unpacks a flat cell index back into per-axis coordinates.
void unravel(std::size_t idx, const std::vector<int>& dims, int* coord) {
    for (int a = int(dims.size()) - 1; a >= 0; --a) {
        coord[a] = int(idx % std::size_t(dims[a]));
        idx /= std::size_t(dims[a]);
    }
}

}  // namespace

CellGrid seed_from_image(const CellGrid& image, int total_channels) {
    const int n = image.channels();
    if (total_channels < n)
        throw std::invalid_argument("seed_from_image: total_channels < image channels");
    GridShape shape{image.dims(), total_channels};
    CellGrid out(shape, n, AllocClass::persistent, "seed_state");
    const std::size_t cells = out.cells();
    const float* src = image.data();
    float* dst = out.data();
    par::for_ranges(cells, [&](std::size_t b, std::size_t e) {
        for (std::size_t cell = b; cell < e; ++cell)
            std::memcpy(dst + cell * total_channels, src + cell * n, sizeof(float) * n);
    });
    return out;
}

CellGrid avg_downsample(const CellGrid& grid, const AxisFactors& factors) {
    const auto& dims = grid.dims();
    const int nd = grid.ndim();
    if (int(factors.f.size()) != nd)
        throw std::invalid_argument("avg_downsample: factor rank mismatch");

    std::vector<int> out_dims(nd);
    for (int a = 0; a < nd; ++a)
        out_dims[a] = (dims[a] + factors.f[a] - 1) / factors.f[a];

    const int C = grid.channels();
    CellGrid out(GridShape{out_dims, C}, grid.image_channels(),
                 AllocClass::persistent, "downsampled");

    const float inv = 1.0f / float(factors.block_cells());
    const std::size_t out_cells = out.cells();

    par::for_ranges(out_cells, [&](std::size_t b, std::size_t e) {
        int oc[3] = {0, 0, 0};
        int sc[3] = {0, 0, 0};
        std::vector<float> acc(C);
        for (std::size_t cell = b; cell < e; ++cell) {
            unravel(cell, out_dims, oc);
            std::fill(acc.begin(), acc.end(), 0.0f);
            // Iterate the source block in row-major order; reads past the edge
            // clamp to the border cell (edge replication).
            const int fh = factors.f[0], fw = factors.f[1];
            const int fd = nd == 3 ? factors.f[2] : 1;
            for (int jh = 0; jh < fh; ++jh) {
                sc[0] = std::min(oc[0] * fh + jh, dims[0] - 1);
                for (int jw = 0; jw < fw; ++jw) {
                    sc[1] = std::min(oc[1] * fw + jw, dims[1] - 1);
                    for (int jd = 0; jd < fd; ++jd) {
                        if (nd == 3) sc[2] = std::min(oc[2] * fd + jd, dims[2] - 1);
                        const float* src = grid.data() + cell_index(dims, sc) * C;
                        for (int c = 0; c < C; ++c) acc[c] += src[c];
                    }
                }
            }
            float* dst = out.data() + cell * C;
            for (int c = 0; c < C; ++c) dst[c] = acc[c] * inv;
        }
    });
    return out;
}

CellGrid nn_upsample(const CellGrid& grid, const AxisFactors& factors,
                     const std::vector<int>& target_dims) {
    const auto& dims = grid.dims();
    const int nd = grid.ndim();
    if (int(factors.f.size()) != nd || int(target_dims.size()) != nd)
        throw std::invalid_argument("nn_upsample: rank mismatch");
    for (int a = 0; a < nd; ++a) {
        const int hi = dims[a] * factors.f[a];
        const int lo = hi - factors.f[a] + 1;
        if (target_dims[a] < lo || target_dims[a] > hi)
            throw std::invalid_argument("nn_upsample: target extent inconsistent with factor");
    }

    const int C = grid.channels();
    CellGrid out(GridShape{target_dims, C}, grid.image_channels(),
                 AllocClass::persistent, "upsampled");
    const std::size_t out_cells = out.cells();

    par::for_ranges(out_cells, [&](std::size_t b, std::size_t e) {
        int oc[3] = {0, 0, 0};
        int sc[3] = {0, 0, 0};
        for (std::size_t cell = b; cell < e; ++cell) {
            unravel(cell, target_dims, oc);
            for (int a = 0; a < nd; ++a) sc[a] = oc[a] / factors.f[a];
            const float* src = grid.data() + cell_index(dims, sc) * C;
            std::memcpy(out.data() + cell * C, src, sizeof(float) * C);
        }
    });
    return out;
}

CellGrid crop_patch(const CellGrid& grid, const std::vector<int>& origin,
                    const std::vector<int>& size) {
    const auto& dims = grid.dims();
    const int nd = grid.ndim();
    if (int(origin.size()) != nd || int(size.size()) != nd)
        throw std::invalid_argument("crop_patch: rank mismatch");
    for (int a = 0; a < nd; ++a) {
        if (origin[a] < 0 || size[a] < 1 || origin[a] + size[a] > dims[a])
            throw std::invalid_argument("crop_patch: window out of bounds");
    }

    const int C = grid.channels();
    CellGrid out(GridShape{size, C}, grid.image_channels(), AllocClass::persistent, "patch");
    const std::size_t out_cells = out.cells();

    par::for_ranges(out_cells, [&](std::size_t b, std::size_t e) {
        int oc[3] = {0, 0, 0};
        int sc[3] = {0, 0, 0};
        for (std::size_t cell = b; cell < e; ++cell) {
            unravel(cell, size, oc);
            for (int a = 0; a < nd; ++a) sc[a] = origin[a] + oc[a];
            std::memcpy(out.data() + cell * C, grid.data() + cell_index(dims, sc) * C,
                        sizeof(float) * C);
        }
    });
    return out;
}

bool all_finite(const CellGrid& grid) {
    const float* p = grid.data();
    for (std::size_t i = 0, n = grid.size(); i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace onca
