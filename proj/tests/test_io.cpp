#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "onca/bench.hpp"
#include "onca/dataset.hpp"
#include "onca/png_io.hpp"
#include "onca/rng.hpp"

using namespace onca;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gray PNGs round-trip") {
    TempDir dir("onca_png_test");
    std::vector<std::uint8_t> pixels(24 * 17);
    Rng rng(1);
    for (auto& p : pixels) p = std::uint8_t(rng.next_below(256));
    write_png_gray(dir / "g.png", 24, 17, pixels);
    const PngImage img = read_png(dir / "g.png");
    CHECK(img.width == 24);
    CHECK(img.height == 17);
    CHECK(img.channels == 1);
    CHECK(img.pixels == pixels);
}

TEST_CASE("palette masks keep their class ids") {
    TempDir dir("onca_palette_test");
    std::vector<std::uint8_t> ids(10 * 8);
    Rng rng(2);
    for (auto& v : ids) v = std::uint8_t(rng.next_below(5));
    write_png_palette(dir / "m.png", 10, 8, ids);
    const PngImage img = read_png(dir / "m.png");
    CHECK(img.channels == 1);
    CHECK(img.pixels == ids);
}

TEST_CASE("volume files round-trip bit-exactly") {
    TempDir dir("onca_ovol_test");
    Volume v;
    v.dims = {4, 5, 3};
    v.channels = 2;
    v.f32.resize(4 * 5 * 3 * 2);
    Rng rng(3);
    for (auto& x : v.f32) x = float(rng.next_uniform(-4, 4));
    save_volume(v, dir / "v.ovol");
    const Volume r = load_volume(dir / "v.ovol");
    CHECK(r.dims == v.dims);
    CHECK(r.channels == 2);
    CHECK_FALSE(r.is_u8);
    CHECK(r.f32 == v.f32);

    Volume m;
    m.dims = {3, 3, 2};
    m.channels = 1;
    m.is_u8 = true;
    m.u8 = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17};
    save_volume(m, dir / "m.ovol");
    const Volume rm = load_volume(dir / "m.ovol");
    CHECK(rm.is_u8);
    CHECK(rm.u8 == m.u8);
}

TEST_CASE("volume loader reports distinct failures") {
    TempDir dir("onca_ovol_err");
    Volume v;
    v.dims = {2, 2, 1};
    v.channels = 1;
    v.f32 = {1, 2, 3, 4};
    save_volume(v, dir / "v.ovol");
    const std::string bytes = slurp(dir / "v.ovol");

    auto write_bytes = [&](const std::string& data) {
        std::ofstream out(dir / "bad.ovol", std::ios::binary | std::ios::trunc);
        out.write(data.data(), std::streamsize(data.size()));
    };
    write_bytes("XXXX" + bytes.substr(4));
    CHECK_THROWS_WITH_AS(load_volume(dir / "bad.ovol"), doctest::Contains("bad magic"),
                         std::runtime_error);
    write_bytes(bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_WITH_AS(load_volume(dir / "bad.ovol"), doctest::Contains("truncated"),
                         std::runtime_error);
    write_bytes(bytes + "zz");
    CHECK_THROWS_WITH_AS(load_volume(dir / "bad.ovol"), doctest::Contains("disagrees"),
                         std::runtime_error);
}

TEST_CASE("8-bit 255 loads as exactly 1.0") {
    TempDir dir("onca_scale_test");
    std::vector<std::uint8_t> pixels{0, 128, 255, 64};
    write_png_gray(dir / "img.png", 2, 2, pixels);
    write_png_palette(dir / "mask.png", 2, 2, {0, 1, 1, 0});
    const TrainSample s = load_sample(dir / "img.png", dir / "mask.png", 2);
    CHECK(s.image[2] == 1.0f);
    CHECK(s.image[0] == 0.0f);
    CHECK(s.mask == std::vector<std::uint8_t>{0, 1, 1, 0});
}

TEST_CASE("image/mask extent mismatches are rejected") {
    TempDir dir("onca_mismatch_test");
    write_png_gray(dir / "img.png", 4, 4, std::vector<std::uint8_t>(16, 9));
    write_png_palette(dir / "mask.png", 4, 5, std::vector<std::uint8_t>(20, 0));
    CHECK_THROWS_WITH_AS(load_sample(dir / "img.png", dir / "mask.png", 2),
                         doctest::Contains("extent mismatch"), std::runtime_error);
    CHECK_THROWS_AS(load_sample(dir / "missing.png", dir / "mask.png", 2),
                    std::runtime_error);
}

TEST_CASE("synthetic generation is deterministic and splits by patient") {
    TempDir dir("onca_gen_test");
    const DatasetManifest m1 = gen_synthetic(SyntheticTask::disks2d, 10, {32, 32}, 9,
                                             dir / "a");
    const DatasetManifest m2 = gen_synthetic(SyntheticTask::disks2d, 10, {32, 32}, 9,
                                             dir / "b");
    REQUIRE(m1.samples.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(slurp(dir / ("a/" + m1.samples[i].image_path)) ==
              slurp(dir / ("b/" + m2.samples[i].image_path)));
        CHECK(m1.samples[i].split == m2.samples[i].split);
    }

    // 30% of patients in test, and no patient in both splits.
    int test_count = 0;
    std::set<std::string> train_patients, test_patients;
    for (const auto& s : m1.samples) {
        if (s.split == "test") {
            ++test_count;
            test_patients.insert(s.patient);
        } else {
            train_patients.insert(s.patient);
        }
    }
    CHECK(test_count == 3);
    for (const auto& p : test_patients) CHECK(train_patients.count(p) == 0);
}

TEST_CASE("an empty dataset is a valid manifest") {
    TempDir dir("onca_empty_test");
    const DatasetManifest m = gen_synthetic(SyntheticTask::disks2d, 0, {16, 16}, 1,
                                            dir / "d");
    CHECK(m.samples.empty());
    const DatasetManifest r = DatasetManifest::load(dir / "d/manifest.json");
    CHECK(r.samples.empty());
    CHECK(r.ndim == 2);
}

TEST_CASE("manifests round-trip") {
    TempDir dir("onca_manifest_test");
    DatasetManifest m;
    m.ndim = 3;
    m.image_channels = 2;
    m.num_classes = 4;
    m.samples.push_back({"i.ovol", "m.ovol", "p01", "train"});
    m.samples.push_back({"j.ovol", "n.ovol", "p02", "test"});
    m.save(dir / "m.json");
    const DatasetManifest r = DatasetManifest::load(dir / "m.json");
    CHECK(r.ndim == 3);
    CHECK(r.num_classes == 4);
    REQUIRE(r.samples.size() == 2);
    CHECK(r.samples[1].patient == "p02");
    CHECK(r.samples[1].split == "test");
}

TEST_CASE("flipping the stripes marker flips the labels and only the corner") {
    std::vector<float> img_a, img_b;
    std::vector<std::uint8_t> mask_a, mask_b;
    make_stripes_sample({64, 64}, 42, true, img_a, mask_a);
    make_stripes_sample({64, 64}, 42, false, img_b, mask_b);

    for (int h = 0; h < 64; ++h)
        for (int w = 0; w < 64; ++w) {
            const std::size_t i = std::size_t(h) * 64 + w;
            CHECK(mask_b[i] == 1 - mask_a[i]);
            if (h >= 16 || w >= 16) CHECK(img_a[i] == img_b[i]);
        }
    // The marker block itself differs.
    CHECK(img_a[0] != img_b[0]);
}

TEST_CASE("3D blob volumes generate and load") {
    TempDir dir("onca_blob_test");
    const DatasetManifest m = gen_synthetic(SyntheticTask::blobs3d, 2, {16, 16, 8}, 4,
                                            dir / "v");
    const std::vector<TrainSample> train = load_split(m, dir / "v/manifest.json", "train");
    REQUIRE(!train.empty());
    CHECK(train[0].image.dims() == std::vector<int>{16, 16, 8});
    CHECK(train[0].mask.size() == std::size_t(16) * 16 * 8);
    bool any_fg = false;
    for (auto v : train[0].mask) any_fg = any_fg || v;
    CHECK(any_fg);
}

TEST_CASE("bench CSV uses the fixed header and dot decimals") {
    TempDir dir("onca_csv_test");
    std::vector<BenchRecord> recs;
    recs.push_back({"fused", 4096, 0.125, 131072, 96, false});
    recs.push_back({"reference", 4096, 0.5, 131072, 590848, false});
    recs.push_back({"fused", 1 << 20, 0.0, 0, 0, true});
    write_bench_csv(dir / "b.csv", recs);
    const std::string text = slurp(dir / "b.csv");
    CHECK(text.find("engine,cells,seconds,peak_persistent,peak_transient\n") == 0);
    CHECK(text.find("fused,4096,0.125,131072,96") != std::string::npos);
    CHECK(text.find("fused,1048576,OOM,0,0") != std::string::npos);
    CHECK(text.find(',') != std::string::npos);
    CHECK(text.find("0,125") == std::string::npos);  // no comma decimals
}
