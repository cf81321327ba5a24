// Command-line front end: dataset synthesis, training, inference, evaluation,
// scaling benchmarks, gradient checking, and pyramid inspection.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "onca/bench.hpp"
#include "onca/dataset.hpp"
#include "onca/model.hpp"
#include "onca/parallel.hpp"
#include "onca/png_io.hpp"
#include "onca/pyramid.hpp"
#include "onca/train.hpp"

using nlohmann::json;
using namespace onca;

namespace {

std::vector<int> parse_extents(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

CellGrid load_input_grid(const std::string& path) {
    if (ends_with(path, ".png")) {
        const PngImage img = read_png(path);
        CellGrid grid(GridShape{{img.height, img.width}, img.channels}, img.channels);
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = float(img.pixels[i]) / 255.0f;
        return grid;
    }
    const Volume v = load_volume(path);
    CellGrid grid(GridShape{v.dims, v.channels}, v.channels);
    if (v.is_u8) {
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = float(v.u8[i]) / 255.0f;
    } else {
        std::copy(v.f32.begin(), v.f32.end(), grid.data());
    }
    return grid;
}

EngineKind parse_engine(const std::string& name) {
    if (name == "fused") return EngineKind::fused;
    if (name == "reference") return EngineKind::reference;
    throw std::invalid_argument("unknown engine: " + name);
}

int cmd_train(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config " + config_path);
    json cfg;
    in >> cfg;

    const std::string manifest_path = cfg.at("manifest").get<std::string>();
    const std::string out_model = cfg.at("out_model").get<std::string>();
    const DatasetManifest manifest = DatasetManifest::load(manifest_path);

    TrainData data;
    data.train = load_split(manifest, manifest_path, "train");
    data.val = load_split(manifest, manifest_path, "test");
    if (data.train.empty()) throw std::runtime_error("train split is empty");

    const json mj = cfg.value("model", json::object());
    ModelConfig mc;
    mc.ndim = manifest.ndim;
    mc.channels = mj.value("channels", 16);
    mc.hidden = mj.value("hidden", 64);
    const int levels = mj.value("levels", 5);
    const double alpha0 = mj.value("alpha0", 1.0);
    const int refine_steps = mj.value("refine_steps", 10);
    const int min_extent = mj.value("min_extent", 5);
    const float fire_rate = mj.value("fire_rate", 0.5f);

    TrainConfig tc;
    const json tj = cfg.value("train", json::object());
    tc.adam.lr0 = tj.value("lr0", 1.6e-3);
    tc.adam.lr_decay = tj.value("lr_decay", 0.9992);
    tc.adam.beta1 = tj.value("beta1", 0.9);
    tc.adam.beta2 = tj.value("beta2", 0.99);
    tc.adam.eps = tj.value("adam_eps", 1e-8);
    tc.ema_alpha = tj.value("ema_alpha", 0.99);
    tc.lambda_dice = tj.value("lambda_dice", 1.0);
    tc.batch_size = tj.value("batch_size", 3);
    tc.epochs = tj.value("epochs", 0);
    tc.batches_per_epoch = tj.value("batches_per_epoch", 200);
    tc.target_val_dice = tj.value("target_val_dice", 0.0);
    tc.seed = cfg.value("seed", std::uint64_t(0));
    tc.log_csv = cfg.value("log_csv", std::string());

    const PyramidSchedule schedule = build_schedule(
        data.train.front().image.dims(), levels, min_extent, alpha0, refine_steps);

    const int patch_levels = tj.value("patch_levels", 0);
    if (patch_levels > 0) {
        std::vector<int> ext = tj.at("patch_extents").get<std::vector<int>>();
        for (int l = levels - 1; l >= levels - patch_levels; --l) {
            tc.patch_plan[l] = ext;
            if (l > levels - patch_levels) {
                const auto& f = schedule.levels[std::size_t(l) - 1].factors_to_finer;
                for (std::size_t a = 0; a < ext.size(); ++a) ext[a] /= f[a];
            }
        }
    }

    OctreeModel model = init_model(mc, schedule, manifest.image_channels,
                                   manifest.num_classes, tc.seed, fire_rate);

    const FitResult result = fit(std::move(model), data, tc);
    save_model(result.model, out_model);
    save_model(result.shadow, out_model + ".ema");
    json side;
    side["step"] = result.optimizer_steps;
    side["lr"] = result.final_lr;
    side["epoch"] = result.epochs_run;
    std::ofstream sout(out_model + ".train.json", std::ios::trunc);
    sout << side.dump(2) << '\n';

    if (!result.log.empty())
        std::printf("trained %d epochs, val dice %.4f\n", result.epochs_run,
                    result.log.back().val_dice);
    else
        std::printf("wrote initialized checkpoint (0 epochs)\n");
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& input,
              const std::string& output, const std::string& engine, std::uint64_t seed) {
    const OctreeModel model = load_model(model_path);
    const CellGrid image = load_input_grid(input);
    const SegmentationResult seg = segment(image, model, parse_engine(engine), seed);
    save_mask(output, seg.mask, seg.dims);
    double total = 0.0;
    for (double s : seg.level_seconds) total += s;
    std::printf("segmented %zu cells in %.3fs (%s engine)\n", seg.mask.size(), total,
                engine.c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& manifest_path,
             const std::string& split, const std::string& engine, std::uint64_t seed) {
    const OctreeModel model = load_model(model_path);
    const DatasetManifest manifest = DatasetManifest::load(manifest_path);
    const std::vector<TrainSample> samples = load_split(manifest, manifest_path, split);
    if (samples.empty()) throw std::runtime_error("no samples in split " + split);
    const EvalResult ev = evaluate_dice(model, samples, parse_engine(engine), seed);
    for (std::size_t c = 1; c < ev.per_class.size(); ++c)
        if (!std::isnan(ev.per_class[c]))
            std::printf("class %zu dice %.4f\n", c, ev.per_class[c]);
    std::printf("mean dice %.4f over %zu samples\n", ev.mean_dice, samples.size());
    return 0;
}

int cmd_bench(const std::string& model_path, const std::string& sizes_str,
              const std::string& engines_str, const std::string& out_csv, int steps, int reps,
              std::uint64_t seed) {
    const OctreeModel model = load_model(model_path);
    std::vector<std::vector<int>> sizes;
    for (int side : parse_extents(sizes_str)) {
        if (model.ndim() == 2)
            sizes.push_back({side, side});
        else
            sizes.push_back({side, side, 8});
    }
    std::vector<EngineKind> engines;
    {
        std::stringstream ss(engines_str);
        std::string tok;
        while (std::getline(ss, tok, ',')) engines.push_back(parse_engine(tok));
    }
    const auto records = bench_scaling(model, engines, sizes, reps, steps, seed);
    write_bench_csv(out_csv, records);
    for (const auto& r : records) {
        if (r.oom)
            std::printf("%-10s %10zu cells  OOM\n", r.engine.c_str(), r.cells);
        else
            std::printf("%-10s %10zu cells  %8.3fs  persistent %zu  transient %zu\n",
                        r.engine.c_str(), r.cells, r.seconds, r.peak_persistent,
                        r.peak_transient);
    }
    std::printf("wrote %s\n", out_csv.c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int param_count) {
    double max_err = 0.0;
    std::size_t checked = 0;
    for (int k = 0; k < 10; ++k) {
        const GradCheckResult r = pyramid_gradcheck(seed + std::uint64_t(k), param_count);
        max_err = std::max(max_err, r.max_err);
        checked += r.checked;
    }
    std::printf("gradcheck: max relative error %.3e over %zu parameters\n", max_err, checked);
    return max_err <= 1e-3 ? 0 : 1;
}

int cmd_pyramid(const std::string& input, int levels, const std::string& out_dir,
                int min_extent) {
    const CellGrid image = load_input_grid(input);
    const PyramidSchedule schedule = build_schedule(image.dims(), levels, min_extent);
    const std::vector<CellGrid> pyr = build_image_pyramid(image, schedule);
    for (int l = 0; l < levels; ++l) {
        const CellGrid& g = pyr[std::size_t(l)];
        char name[512];
        if (g.ndim() == 2) {
            std::snprintf(name, sizeof name, "%s/level_%d.png", out_dir.c_str(), l);
            std::vector<std::uint8_t> q(g.cells());
            for (std::size_t i = 0; i < g.cells(); ++i)
                q[i] = std::uint8_t(std::lround(std::clamp(g.at(i, 0), 0.0f, 1.0f) * 255.0f));
            write_png_gray(name, g.dims()[1], g.dims()[0], q);
        } else {
            std::snprintf(name, sizeof name, "%s/level_%d.ovol", out_dir.c_str(), l);
            Volume v;
            v.dims = g.dims();
            v.channels = g.channels();
            v.f32.assign(g.data(), g.data() + g.size());
            save_volume(v, name);
        }
        std::printf("level %d: ", l);
        for (std::size_t a = 0; a < g.dims().size(); ++a)
            std::printf("%s%d", a ? "x" : "", g.dims()[a]);
        std::printf(" steps %d -> %s\n", schedule.levels[std::size_t(l)].steps, name);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"octree NCA segmentation engine"};
    app.require_subcommand(1);
    int workers = 0;
    app.add_option("--workers", workers, "worker threads for data-parallel loops");

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string gen_task, gen_out;
    std::string gen_extents = "64,64";
    int gen_count = 16;
    std::uint64_t gen_seed = 1;
    gen->add_option("task", gen_task, "disks2d | blobs3d | stripes2d")->required();
    gen->add_option("--count", gen_count);
    gen->add_option("--extents", gen_extents, "comma-separated H,W[,D]");
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--seed", gen_seed);

    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    std::string train_config;
    train->add_option("config", train_config, "config JSON path")->required();

    auto* infer = app.add_subcommand("infer", "segment one input file");
    std::string inf_model, inf_input, inf_output, inf_engine = "fused";
    std::uint64_t inf_seed = 0;
    infer->add_option("model", inf_model)->required();
    infer->add_option("input", inf_input)->required();
    infer->add_option("output", inf_output)->required();
    infer->add_option("--engine", inf_engine, "fused | reference");
    infer->add_option("--seed", inf_seed);

    auto* eval = app.add_subcommand("eval", "evaluate dice on a manifest split");
    std::string ev_model, ev_manifest, ev_split = "test", ev_engine = "fused";
    std::uint64_t ev_seed = 0;
    eval->add_option("model", ev_model)->required();
    eval->add_option("manifest", ev_manifest)->required();
    eval->add_option("--split", ev_split);
    eval->add_option("--engine", ev_engine);
    eval->add_option("--seed", ev_seed);

    auto* bench = app.add_subcommand("bench", "engine scaling benchmark");
    std::string be_model, be_sizes = "64,128,256", be_engines = "fused,reference";
    std::string be_out = "bench.csv";
    int be_steps = 10, be_reps = 3;
    std::uint64_t be_seed = 0;
    bench->add_option("model", be_model)->required();
    bench->add_option("--sizes", be_sizes, "comma-separated square side lengths");
    bench->add_option("--engines", be_engines);
    bench->add_option("--out", be_out);
    bench->add_option("--steps", be_steps);
    bench->add_option("--reps", be_reps);
    bench->add_option("--seed", be_seed);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    std::uint64_t gc_seed = 7;
    int gc_params = 6;
    gc->add_option("--seed", gc_seed);
    gc->add_option("--params", gc_params, "sampled parameters per tensor");

    auto* pyr = app.add_subcommand("pyramid", "dump the image pyramid of an input");
    std::string py_input, py_out = ".";
    int py_levels = 5, py_min_extent = 5;
    pyr->add_option("input", py_input)->required();
    pyr->add_option("--levels", py_levels);
    pyr->add_option("--out", py_out);
    pyr->add_option("--min-extent", py_min_extent);

    CLI11_PARSE(app, argc, argv);
    if (workers > 0) par::set_workers(workers);

    try {
        if (*gen) {
            const DatasetManifest m = gen_synthetic(parse_task(gen_task), gen_count,
                                                    parse_extents(gen_extents), gen_seed,
                                                    gen_out);
            std::printf("wrote %zu samples to %s\n", m.samples.size(), gen_out.c_str());
            return 0;
        }
        if (*train) return cmd_train(train_config);
        if (*infer) return cmd_infer(inf_model, inf_input, inf_output, inf_engine, inf_seed);
        if (*eval) return cmd_eval(ev_model, ev_manifest, ev_split, ev_engine, ev_seed);
        if (*bench)
            return cmd_bench(be_model, be_sizes, be_engines, be_out, be_steps, be_reps,
                             be_seed);
        if (*gc) return cmd_gradcheck(gc_seed, gc_params);
        if (*pyr) return cmd_pyramid(py_input, py_levels, py_out, py_min_extent);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
