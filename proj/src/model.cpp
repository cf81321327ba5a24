#include "onca/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "onca/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; big-endian hosts are unsupported");

namespace onca {

using nlohmann::json;

NcaWeights init_weights(const ModelConfig& config, std::uint64_t rng_seed) {
    if (config.ndim < 2 || config.ndim > 3 || config.channels < 1 || config.hidden < 1)
        throw std::invalid_argument("init_weights: bad model dimensions");

    NcaWeights w;
    w.ndim = config.ndim;
    w.channels = config.channels;
    w.hidden = config.hidden;

    const int C = w.channels;
    const int H = w.hidden;
    const int K = w.kernel_taps();

    Rng rng(rng_seed);
    const double conv_scale = 1.0 / std::sqrt(double(K));
    const double w1_scale = 1.0 / std::sqrt(double(2 * C));

    w.conv.resize(std::size_t(C) * K);
    for (auto& v : w.conv) v = float(rng.next_uniform(-conv_scale, conv_scale));
    w.w1.resize(std::size_t(2 * C) * H);
    for (auto& v : w.w1) v = float(rng.next_uniform(-w1_scale, w1_scale));
    w.b1.assign(std::size_t(H), 0.0f);
    // Zero final layer: the initial update is the identity, which keeps the
    // automaton stable at the start of training.
    w.w2.assign(std::size_t(H) * C, 0.0f);
    return w;
}

OctreeModel init_model(const ModelConfig& config, const PyramidSchedule& schedule,
                       int image_channels, int num_classes, std::uint64_t seed,
                       float fire_rate) {
    if (image_channels < 0 || image_channels > config.channels)
        throw std::invalid_argument("init_model: image_channels out of range");
    if (num_classes < 1 || num_classes > config.channels - image_channels)
        throw std::invalid_argument("init_model: num_classes must fit in the hidden channels");
    if (!(fire_rate > 0.0f && fire_rate <= 1.0f))
        throw std::invalid_argument("init_model: fire_rate must be in (0,1]");

    OctreeModel m;
    m.schedule = schedule;
    m.image_channels = image_channels;
    m.num_classes = num_classes;
    m.fire_rate = fire_rate;
    m.seed_of_record = seed;
    Rng rng(seed);
    for (int l = 0; l < schedule.num_levels(); ++l)
        m.levels.push_back(init_weights(config, rng.next_u64()));
    return m;
}

std::size_t count_params(const OctreeModel& model) {
    std::size_t n = 0;
    for (const auto& w : model.levels) n += w.param_count();
    return n;
}

namespace {

constexpr char kMagic[4] = {'O', 'N', 'C', 'A'};
constexpr std::uint32_t kVersion = 1;

json schedule_to_json(const PyramidSchedule& s) {
    json j;
    j["alpha0"] = s.alpha0;
    j["refine_steps"] = s.refine_steps;
    j["min_extent"] = s.min_extent;
    json levels = json::array();
    for (const auto& l : s.levels) {
        levels.push_back(
            {{"extents", l.extents}, {"factors", l.factors_to_finer}, {"steps", l.steps}});
    }
    j["levels"] = levels;
    return j;
}

PyramidSchedule schedule_from_json(const json& j) {
    PyramidSchedule s;
    s.alpha0 = j.at("alpha0").get<double>();
    s.refine_steps = j.at("refine_steps").get<int>();
    s.min_extent = j.at("min_extent").get<int>();
    for (const auto& l : j.at("levels")) {
        LevelSpec spec;
        spec.extents = l.at("extents").get<std::vector<int>>();
        spec.factors_to_finer = l.at("factors").get<std::vector<int>>();
        spec.steps = l.at("steps").get<int>();
        s.levels.push_back(std::move(spec));
    }
    return s;
}

void append_floats(std::string& blob, const std::vector<float>& v) {
    const std::size_t off = blob.size();
    blob.resize(off + v.size() * 4);
    std::memcpy(blob.data() + off, v.data(), v.size() * 4);
}

void take_floats(const std::string& blob, std::size_t& off, std::vector<float>& v,
                 std::size_t count) {
    v.resize(count);
    std::memcpy(v.data(), blob.data() + off, count * 4);
    off += count * 4;
}

}  // namespace

void save_model(const OctreeModel& model, const std::string& path) {
    if (model.levels.empty()) throw std::invalid_argument("save_model: empty model");
    if (int(model.levels.size()) != model.schedule.num_levels())
        throw std::invalid_argument("save_model: level count disagrees with schedule");

    json header;
    header["ndim"] = model.ndim();
    header["channels"] = model.channels();
    header["hidden"] = model.hidden();
    header["image_channels"] = model.image_channels;
    header["num_classes"] = model.num_classes;
    header["fire_rate"] = double(model.fire_rate);
    header["seed"] = model.seed_of_record;
    header["schedule"] = schedule_to_json(model.schedule);
    const std::string htext = header.dump();

    std::string blob;
    for (const auto& w : model.levels) {
        append_floats(blob, w.conv);
        append_floats(blob, w.w1);
        append_floats(blob, w.b1);
        append_floats(blob, w.w2);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_model: cannot open " + path);
    out.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    const std::uint32_t hlen = std::uint32_t(htext.size());
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(htext.data(), std::streamsize(htext.size()));
    out.write(blob.data(), std::streamsize(blob.size()));
    if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

OctreeModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_model: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 12) throw std::runtime_error("load_model: truncated header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("load_model: bad magic");
    std::uint32_t version = 0, hlen = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&hlen, bytes.data() + 8, 4);
    if (version != kVersion)
        throw std::runtime_error("load_model: unsupported version " + std::to_string(version));
    if (bytes.size() < 12 + std::size_t(hlen))
        throw std::runtime_error("load_model: truncated header");

    json header;
    try {
        header = json::parse(bytes.substr(12, hlen));
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("load_model: invalid header: ") + e.what());
    }

    OctreeModel m;
    ModelConfig cfg;
    cfg.ndim = header.at("ndim").get<int>();
    cfg.channels = header.at("channels").get<int>();
    cfg.hidden = header.at("hidden").get<int>();
    m.image_channels = header.at("image_channels").get<int>();
    m.num_classes = header.at("num_classes").get<int>();
    m.fire_rate = float(header.at("fire_rate").get<double>());
    m.seed_of_record = header.at("seed").get<std::uint64_t>();
    m.schedule = schedule_from_json(header.at("schedule"));

    NcaWeights proto;
    proto.ndim = cfg.ndim;
    proto.channels = cfg.channels;
    proto.hidden = cfg.hidden;
    const std::size_t per_level_bytes = proto.param_count() * 4;
    const std::size_t expected = per_level_bytes * m.schedule.num_levels();
    const std::size_t actual = bytes.size() - 12 - hlen;
    if (actual < expected) throw std::runtime_error("load_model: truncated blob");
    if (actual > expected)
        throw std::runtime_error("load_model: blob length disagrees with header");

    const int C = cfg.channels, H = cfg.hidden, K = proto.kernel_taps();
    const std::string blob = bytes.substr(12 + hlen);
    std::size_t off = 0;
    for (int l = 0; l < m.schedule.num_levels(); ++l) {
        NcaWeights w = proto;
        take_floats(blob, off, w.conv, std::size_t(C) * K);
        take_floats(blob, off, w.w1, std::size_t(2 * C) * H);
        take_floats(blob, off, w.b1, std::size_t(H));
        take_floats(blob, off, w.w2, std::size_t(H) * C);
        m.levels.push_back(std::move(w));
    }
    return m;
}

}  // namespace onca
