#include "onca/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "onca/png_io.hpp"

namespace onca {

using nlohmann::json;

void DatasetManifest::save(const std::string& path) const {
    json j;
    j["ndim"] = ndim;
    j["image_channels"] = image_channels;
    j["num_classes"] = num_classes;
    json arr = json::array();
    for (const auto& s : samples)
        arr.push_back({{"image", s.image_path},
                       {"mask", s.mask_path},
                       {"patient", s.patient},
                       {"split", s.split}});
    j["samples"] = arr;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("manifest: cannot open " + path);
    out << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("manifest: invalid json: ") + e.what());
    }
    DatasetManifest m;
    m.ndim = j.at("ndim").get<int>();
    m.image_channels = j.at("image_channels").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    for (const auto& s : j.at("samples")) {
        m.samples.push_back({s.at("image").get<std::string>(), s.at("mask").get<std::string>(),
                             s.at("patient").get<std::string>(),
                             s.at("split").get<std::string>()});
    }
    return m;
}

namespace {

constexpr char kVolMagic[4] = {'O', 'V', 'O', 'L'};
constexpr std::uint32_t kVolVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(const std::string& bytes, std::size_t off) {
    std::uint32_t v = 0;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
}

}  // namespace

void save_volume(const Volume& v, const std::string& path) {
    if (v.dims.size() != 3) throw std::invalid_argument("save_volume: need H,W,D extents");
    const std::size_t cells =
        std::size_t(v.dims[0]) * std::size_t(v.dims[1]) * std::size_t(v.dims[2]);
    const std::size_t values = cells * std::size_t(v.channels);
    if (v.is_u8 ? v.u8.size() != values : v.f32.size() != values)
        throw std::invalid_argument("save_volume: payload size mismatch");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_volume: cannot open " + path);
    out.write(kVolMagic, 4);
    put_u32(out, kVolVersion);
    put_u32(out, std::uint32_t(v.dims[0]));
    put_u32(out, std::uint32_t(v.dims[1]));
    put_u32(out, std::uint32_t(v.dims[2]));
    put_u32(out, std::uint32_t(v.channels));
    put_u32(out, v.is_u8 ? 1u : 0u);
    if (v.is_u8)
        out.write(reinterpret_cast<const char*>(v.u8.data()), std::streamsize(values));
    else
        out.write(reinterpret_cast<const char*>(v.f32.data()), std::streamsize(values * 4));
    if (!out) throw std::runtime_error("save_volume: write failed for " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_volume: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 28) throw std::runtime_error("load_volume: truncated header");
    if (std::memcmp(bytes.data(), kVolMagic, 4) != 0)
        throw std::runtime_error("load_volume: bad magic");
    if (get_u32(bytes, 4) != kVolVersion)
        throw std::runtime_error("load_volume: unsupported version");

    Volume v;
    v.dims = {int(get_u32(bytes, 8)), int(get_u32(bytes, 12)), int(get_u32(bytes, 16))};
    v.channels = int(get_u32(bytes, 20));
    const std::uint32_t dtype = get_u32(bytes, 24);
    if (dtype > 1) throw std::runtime_error("load_volume: unknown dtype tag");
    v.is_u8 = dtype == 1;

    const std::size_t values = std::size_t(v.dims[0]) * std::size_t(v.dims[1]) *
                               std::size_t(v.dims[2]) * std::size_t(v.channels);
    const std::size_t expected = 28 + values * (v.is_u8 ? 1 : 4);
    if (bytes.size() < expected) throw std::runtime_error("load_volume: truncated payload");
    if (bytes.size() > expected)
        throw std::runtime_error("load_volume: payload length disagrees with header");

    if (v.is_u8) {
        v.u8.resize(values);
        std::memcpy(v.u8.data(), bytes.data() + 28, values);
    } else {
        v.f32.resize(values);
        std::memcpy(v.f32.data(), bytes.data() + 28, values * 4);
    }
    return v;
}

SyntheticTask parse_task(const std::string& name) {
    if (name == "disks2d") return SyntheticTask::disks2d;
    if (name == "blobs3d") return SyntheticTask::blobs3d;
    if (name == "stripes2d") return SyntheticTask::stripes2d;
    throw std::invalid_argument("unknown synthetic task: " + name);
}

namespace {

// Bilinear value noise in [0, 1] with a lattice spacing of `cell` pixels.
std::vector<float> value_noise2d(int H, int W, int cell, Rng& rng) {
    const int gh = H / cell + 2;
    const int gw = W / cell + 2;
    std::vector<float> lattice(std::size_t(gh) * gw);
    for (auto& v : lattice) v = float(rng.next_unit());
    std::vector<float> out(std::size_t(H) * W);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            const float fy = float(h) / cell;
            const float fx = float(w) / cell;
            const int y0 = int(fy), x0 = int(fx);
            const float ty = fy - y0, tx = fx - x0;
            const float a = lattice[std::size_t(y0) * gw + x0];
            const float b = lattice[std::size_t(y0) * gw + x0 + 1];
            const float c = lattice[std::size_t(y0 + 1) * gw + x0];
            const float d = lattice[std::size_t(y0 + 1) * gw + x0 + 1];
            out[std::size_t(h) * W + w] =
                (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
        }
    return out;
}

void make_disks_sample(const std::vector<int>& extents, std::uint64_t sample_seed,
                       std::vector<float>& image, std::vector<std::uint8_t>& mask) {
    const int H = extents[0], W = extents[1];
    Rng rng(sample_seed);
    const std::vector<float> base = value_noise2d(H, W, 16, rng);
    image.assign(std::size_t(H) * W, 0.0f);
    mask.assign(std::size_t(H) * W, 0);

    const int ndisks = 1 + int(rng.next_below(3));
    std::vector<float> cy(ndisks), cx(ndisks), r(ndisks);
    const float m = float(std::min(H, W));
    for (int k = 0; k < ndisks; ++k) {
        cy[k] = float(rng.next_uniform(0.15, 0.85)) * H;
        cx[k] = float(rng.next_uniform(0.15, 0.85)) * W;
        r[k] = float(rng.next_uniform(0.10, 0.22)) * m;
    }
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            float alpha = 0.0f;
            for (int k = 0; k < ndisks; ++k) {
                const float dy = h - cy[k], dx = w - cx[k];
                const float dist = std::sqrt(dy * dy + dx * dx);
                alpha = std::max(alpha, std::clamp(r[k] + 0.5f - dist, 0.0f, 1.0f));
            }
            const float fine = float(rng.next_unit()) - 0.5f;
            const std::size_t i = std::size_t(h) * W + w;
            image[i] = std::clamp(0.18f + 0.25f * base[i] + 0.05f * fine + 0.45f * alpha,
                                  0.0f, 1.0f);
            mask[i] = alpha >= 0.5f ? 1 : 0;
        }
}

void make_blobs_sample(const std::vector<int>& extents, std::uint64_t sample_seed,
                       std::vector<float>& image, std::vector<std::uint8_t>& mask) {
    const int H = extents[0], W = extents[1], D = extents[2];
    Rng rng(sample_seed);
    const int nblobs = 2 + int(rng.next_below(3));
    std::vector<float> cy(nblobs), cx(nblobs), cz(nblobs), sig(nblobs);
    const float m = float(std::min(std::min(H, W), D));
    for (int k = 0; k < nblobs; ++k) {
        cy[k] = float(rng.next_uniform(0.2, 0.8)) * H;
        cx[k] = float(rng.next_uniform(0.2, 0.8)) * W;
        cz[k] = float(rng.next_uniform(0.2, 0.8)) * D;
        sig[k] = float(rng.next_uniform(0.12, 0.25)) * m;
    }
    const std::size_t cells = std::size_t(H) * W * D;
    image.assign(cells, 0.0f);
    mask.assign(cells, 0);
    std::size_t i = 0;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int d = 0; d < D; ++d, ++i) {
                float field = 0.0f;
                for (int k = 0; k < nblobs; ++k) {
                    const float dy = h - cy[k], dx = w - cx[k], dz = d - cz[k];
                    const float q = (dy * dy + dx * dx + dz * dz) / (2.0f * sig[k] * sig[k]);
                    field += std::exp(-q);
                }
                const float noise = float(rng.next_unit()) - 0.5f;
                image[i] =
                    std::clamp(0.15f + 0.6f * std::min(field, 1.2f) / 1.2f + 0.05f * noise,
                               0.0f, 1.0f);
                mask[i] = field > 0.6f ? 1 : 0;
            }
}

constexpr int kStripeBand = 16;   // rows per band
constexpr int kMarkerSize = 16;   // corner marker block

}  // namespace

void make_stripes_sample(const std::vector<int>& extents, std::uint64_t sample_seed,
                         bool marker, std::vector<float>& image,
                         std::vector<std::uint8_t>& mask) {
    const int H = extents[0], W = extents[1];
    Rng rng(sample_seed);
    image.assign(std::size_t(H) * W, 0.0f);
    mask.assign(std::size_t(H) * W, 0);
    // The texture is drawn before the marker is applied, so two samples that
    // share a seed differ only inside the corner block.
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            const int band = (h / kStripeBand) % 2;
            const float noise = (float(rng.next_unit()) - 0.5f) * 0.08f;
            const std::size_t i = std::size_t(h) * W + w;
            image[i] = std::clamp((band ? 0.62f : 0.38f) + noise, 0.0f, 1.0f);
            // The label of every stripe depends on the far-away marker.
            mask[i] = (band == (marker ? 0 : 1)) ? 1 : 0;
        }
    const float mval = marker ? 0.95f : 0.05f;
    for (int h = 0; h < std::min(kMarkerSize, H); ++h)
        for (int w = 0; w < std::min(kMarkerSize, W); ++w)
            image[std::size_t(h) * W + w] = mval;
}

DatasetManifest gen_synthetic(SyntheticTask task, int count, const std::vector<int>& extents,
                              std::uint64_t seed, const std::string& out_dir) {
    const bool is3d = task == SyntheticTask::blobs3d;
    if (is3d ? extents.size() != 3 : extents.size() != 2)
        throw std::invalid_argument("gen_synthetic: extent rank does not match the task");
    std::filesystem::create_directories(out_dir);

    DatasetManifest m;
    m.ndim = is3d ? 3 : 2;
    m.image_channels = 1;
    m.num_classes = 1;

    // Patient-granular split: shuffle patient order, last 30% to test.
    std::vector<int> patients(std::size_t(std::max(count, 0)));
    for (int i = 0; i < count; ++i) patients[std::size_t(i)] = i;
    Rng split_rng(mix64(seed ^ 0x73706C6974ull));
    for (std::size_t i = patients.size(); i > 1; --i)
        std::swap(patients[i - 1], patients[split_rng.next_below(i)]);
    const int ntest = int(std::lround(count * 0.3));
    std::vector<bool> is_test(std::size_t(std::max(count, 0)), false);
    for (int i = 0; i < ntest; ++i) is_test[std::size_t(patients[std::size_t(i)])] = true;

    for (int i = 0; i < count; ++i) {
        const std::uint64_t sample_seed = mix64(seed ^ (std::uint64_t(i) * 0x9E3779B97F4A7C15ull));
        std::vector<float> image;
        std::vector<std::uint8_t> mask;
        switch (task) {
            case SyntheticTask::disks2d: make_disks_sample(extents, sample_seed, image, mask); break;
            case SyntheticTask::blobs3d: make_blobs_sample(extents, sample_seed, image, mask); break;
            case SyntheticTask::stripes2d: {
                Rng mr(mix64(sample_seed ^ 0x6D61726Bull));
                make_stripes_sample(extents, sample_seed, mr.next_unit() < 0.5, image, mask);
                break;
            }
        }

        char img_name[32], mask_name[32], patient[16];
        std::snprintf(img_name, sizeof img_name, "img_%04d.%s", i, is3d ? "ovol" : "png");
        std::snprintf(mask_name, sizeof mask_name, "mask_%04d.%s", i, is3d ? "ovol" : "png");
        std::snprintf(patient, sizeof patient, "p%04d", i);

        const std::string img_path = out_dir + "/" + img_name;
        const std::string mask_path = out_dir + "/" + mask_name;
        if (is3d) {
            Volume iv;
            iv.dims = extents;
            iv.channels = 1;
            iv.f32 = image;
            save_volume(iv, img_path);
            Volume mv;
            mv.dims = extents;
            mv.channels = 1;
            mv.is_u8 = true;
            mv.u8 = mask;
            save_volume(mv, mask_path);
        } else {
            std::vector<std::uint8_t> q(image.size());
            for (std::size_t k = 0; k < image.size(); ++k)
                q[k] = std::uint8_t(std::lround(std::clamp(image[k], 0.0f, 1.0f) * 255.0f));
            write_png_gray(img_path, extents[1], extents[0], q);
            write_png_palette(mask_path, extents[1], extents[0], mask);
        }
        m.samples.push_back({img_name, mask_name, patient,
                             is_test[std::size_t(i)] ? "test" : "train"});
    }
    m.save(out_dir + "/manifest.json");
    return m;
}

TrainSample load_sample(const std::string& image_path, const std::string& mask_path,
                        int ndim) {
    TrainSample s;
    if (ndim == 2) {
        const PngImage img = read_png(image_path);
        const PngImage msk = read_png(mask_path);
        if (msk.channels != 1)
            throw std::runtime_error("load_sample: mask must be single-channel: " + mask_path);
        if (img.width != msk.width || img.height != msk.height)
            throw std::runtime_error("load_sample: image/mask extent mismatch: " + image_path);
        s.image = CellGrid(GridShape{{img.height, img.width}, img.channels}, img.channels);
        for (std::size_t i = 0; i < s.image.size(); ++i)
            s.image[i] = float(img.pixels[i]) / 255.0f;
        s.mask.assign(msk.pixels.begin(), msk.pixels.end());
    } else {
        const Volume img = load_volume(image_path);
        const Volume msk = load_volume(mask_path);
        if (!msk.is_u8 || msk.channels != 1)
            throw std::runtime_error("load_sample: mask must be u8 single-channel: " + mask_path);
        if (img.dims != msk.dims)
            throw std::runtime_error("load_sample: image/mask extent mismatch: " + image_path);
        s.image = CellGrid(GridShape{img.dims, img.channels}, img.channels);
        if (img.is_u8) {
            for (std::size_t i = 0; i < s.image.size(); ++i)
                s.image[i] = float(img.u8[i]) / 255.0f;
        } else {
            std::copy(img.f32.begin(), img.f32.end(), s.image.data());
        }
        s.mask = msk.u8;
    }
    return s;
}

void save_mask(const std::string& path, const std::vector<std::uint8_t>& ids,
               const std::vector<int>& dims) {
    if (dims.size() == 2) {
        write_png_palette(path, dims[1], dims[0], ids);
    } else if (dims.size() == 3) {
        Volume v;
        v.dims = dims;
        v.channels = 1;
        v.is_u8 = true;
        v.u8 = ids;
        save_volume(v, path);
    } else {
        throw std::invalid_argument("save_mask: need 2 or 3 extents");
    }
}

std::string directory_of(const std::string& path) {
    const auto pos = path.find_last_of('/');
    return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

std::vector<TrainSample> load_split(const DatasetManifest& manifest,
                                    const std::string& manifest_path,
                                    const std::string& which) {
    const std::string dir = directory_of(manifest_path);
    std::vector<TrainSample> out;
    for (const auto& ref : manifest.samples) {
        if (ref.split != which) continue;
        out.push_back(
            load_sample(dir + "/" + ref.image_path, dir + "/" + ref.mask_path, manifest.ndim));
    }
    return out;
}

}  // namespace onca
