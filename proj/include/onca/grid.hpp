#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "onca/memtrack.hpp"

namespace onca {

/// Spatial extents (order H, W[, D]) plus channel count. 2 or 3 spatial axes.
struct GridShape {
    std::vector<int> dims;
    int channels = 0;

    int ndim() const { return int(dims.size()); }

    std::size_t cells() const {
        std::size_t n = 1;
        for (int d : dims) n *= std::size_t(d);
        return n;
    }

    std::size_t value_count() const { return cells() * std::size_t(channels); }

    void validate() const {
        if (dims.size() < 2 || dims.size() > 3)
            throw std::invalid_argument("grid shape: need 2 or 3 spatial axes");
        for (int d : dims)
            if (d < 1) throw std::invalid_argument("grid shape: extents must be >= 1");
        if (channels < 1) throw std::invalid_argument("grid shape: channels must be >= 1");
    }

    bool operator==(const GridShape& o) const = default;
};

/// Per-axis resampling factor, each 1 or 2.
struct AxisFactors {
    std::vector<int> f;

    explicit AxisFactors(std::vector<int> factors) : f(std::move(factors)) {
        for (int v : f)
            if (v != 1 && v != 2) throw std::invalid_argument("axis factor must be 1 or 2");
    }
    AxisFactors() = default;

    int block_cells() const {
        int n = 1;
        for (int v : f) n *= v;
        return n;
    }
};

/// Dense multi-channel cell grid, f32, contiguous, channel-innermost.
/// The first image_channels channels hold the clamped input image. Values are
/// immutable once an operation returns; grids may be handed between threads.
class CellGrid {
public:
    CellGrid() = default;
    CellGrid(GridShape shape, int image_channels = 0,
             AllocClass cls = AllocClass::persistent, const char* label = "grid")
        : shape_(std::move(shape)), image_channels_(image_channels) {
        shape_.validate();
        if (image_channels_ < 0 || image_channels_ > shape_.channels)
            throw std::invalid_argument("image_channels out of range");
        data_ = TrackedVec<float>(shape_.value_count(), cls, label);
    }

    const GridShape& shape() const { return shape_; }
    const std::vector<int>& dims() const { return shape_.dims; }
    int ndim() const { return shape_.ndim(); }
    int channels() const { return shape_.channels; }
    int image_channels() const { return image_channels_; }
    std::size_t cells() const { return shape_.cells(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::size_t i) { return data_[i]; }
    const float& operator[](std::size_t i) const { return data_[i]; }

    float& at(std::size_t cell, int c) { return data_[cell * shape_.channels + c]; }
    const float& at(std::size_t cell, int c) const { return data_[cell * shape_.channels + c]; }

    void reclass(AllocClass cls) { data_.reclass(cls); }

private:
    GridShape shape_;
    int image_channels_ = 0;
    TrackedVec<float> data_;
};

/// Flat cell index for coordinates in `dims` order (row-major over axes).
inline std::size_t cell_index(const std::vector<int>& dims, const int* coord) {
    std::size_t idx = 0;
    for (std::size_t a = 0; a < dims.size(); ++a) idx = idx * std::size_t(dims[a]) + std::size_t(coord[a]);
    return idx;
}

/// Places an n-channel image in channels [0,n) of a total_channels-wide grid;
/// the remaining channels are zero.
CellGrid seed_from_image(const CellGrid& image, int total_channels);

/// Mean-pools blocks of `factors` cells. Odd extents are padded by edge
/// replication, so output extents are ceil(extent / factor).
CellGrid avg_downsample(const CellGrid& grid, const AxisFactors& factors);

/// Nearest-neighbor upsampling: output cell i reads source cell floor(i/f)
/// per axis. target_dims may trim up to factor-1 cells per axis.
CellGrid nn_upsample(const CellGrid& grid, const AxisFactors& factors,
                     const std::vector<int>& target_dims);

/// Copies the window [origin, origin+size) per axis.
CellGrid crop_patch(const CellGrid& grid, const std::vector<int>& origin,
                    const std::vector<int>& size);

bool all_finite(const CellGrid& grid);

}  // namespace onca
