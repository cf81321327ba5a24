#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onca/grid.hpp"
#include "onca/rng.hpp"
#include "onca/train.hpp"

namespace onca {

struct SampleRef {
    std::string image_path;  // relative to the manifest's directory
    std::string mask_path;
    std::string patient;
    std::string split;  // "train" | "test"
};

struct DatasetManifest {
    int ndim = 2;
    int image_channels = 1;
    int num_classes = 1;
    std::vector<SampleRef> samples;

    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
};

/// "OVOL" volume container: u32 version, u32 extents H,W,D,C, u32 dtype tag
/// (0 = f32, 1 = u8), little-endian payload, row-major, channel-innermost.
struct Volume {
    std::vector<int> dims;  // H, W, D
    int channels = 1;
    bool is_u8 = false;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
};

void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

enum class SyntheticTask { disks2d, blobs3d, stripes2d };
SyntheticTask parse_task(const std::string& name);

/// Writes `count` deterministic image/mask pairs plus manifest.json into
/// out_dir. 30% of patients go to the test split.
DatasetManifest gen_synthetic(SyntheticTask task, int count, const std::vector<int>& extents,
                              std::uint64_t seed, const std::string& out_dir);

/// Generator internals exposed for the stripes property: with a fixed sample
/// seed, flipping the marker changes the image only inside the corner block
/// and complements the mask.
void make_stripes_sample(const std::vector<int>& extents, std::uint64_t sample_seed,
                         bool marker, std::vector<float>& image,
                         std::vector<std::uint8_t>& mask);

/// Loads an image/mask pair: PNG for 2D (values scaled to [0,1], 255 -> 1.0),
/// OVOL for 3D. Distinct errors for unreadable files and extent mismatches.
TrainSample load_sample(const std::string& image_path, const std::string& mask_path, int ndim);

/// Class-id mask out: palette PNG for 2D, OVOL u8 for 3D.
void save_mask(const std::string& path, const std::vector<std::uint8_t>& ids,
               const std::vector<int>& dims);

/// Loads every sample of one split into memory. `which` is "train" or "test".
std::vector<TrainSample> load_split(const DatasetManifest& manifest,
                                    const std::string& manifest_path, const std::string& which);

std::string directory_of(const std::string& path);

}  // namespace onca
