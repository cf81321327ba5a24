#include "onca/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <locale>
#include <new>

#include "onca/reference.hpp"
#include "onca/rng.hpp"

namespace onca {

const char* engine_name(EngineKind engine) {
    return engine == EngineKind::fused ? "fused" : "reference";
}

namespace {

CellGrid make_bench_state(const std::vector<int>& size, int channels, int image_channels,
                          std::uint64_t seed) {
    CellGrid state(GridShape{size, channels}, image_channels, AllocClass::persistent,
                   "bench_state");
    Rng rng(seed);
    for (std::size_t cell = 0; cell < state.cells(); ++cell)
        for (int c = 0; c < image_channels; ++c)
            state.at(cell, c) = float(rng.next_unit());
    return state;
}

}  // namespace

std::vector<BenchRecord> bench_scaling(const OctreeModel& model,
                                       const std::vector<EngineKind>& engines,
                                       const std::vector<std::vector<int>>& sizes,
                                       int repetitions, int steps, std::uint64_t seed) {
    if (repetitions < 1) throw std::invalid_argument("bench: repetitions must be >= 1");
    const NcaWeights& w = model.levels.front();
    MemoryTracker& tracker = MemoryTracker::instance();

    std::vector<BenchRecord> records;
    for (const EngineKind engine : engines) {
        for (const auto& size : sizes) {
            BenchRecord rec;
            rec.engine = engine_name(engine);
            std::size_t cells = 1;
            for (int e : size) cells *= std::size_t(e);
            rec.cells = cells;

            try {
                std::vector<double> times;
                for (int rep = 0; rep < repetitions; ++rep) {
                    if (rep == 0) tracker.begin_session();
                    CellGrid state =
                        make_bench_state(size, w.channels, model.image_channels, seed);
                    const auto t0 = std::chrono::steady_clock::now();
                    CellGrid out = run_level(std::move(state), w, steps, seed, 0,
                                             model.fire_rate, engine);
                    const auto t1 = std::chrono::steady_clock::now();
                    if (rep == 0) {
                        const MemoryReport rep0 = tracker.end_session(cells);
                        rec.peak_persistent = rep0.peak_persistent_floats;
                        rec.peak_transient = rep0.peak_transient_floats;
                    }
                    times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                std::sort(times.begin(), times.end());
                rec.seconds = times[times.size() / 2];
            } catch (const std::bad_alloc&) {
                if (tracker.session_active()) tracker.end_session(cells);
                rec.oom = true;
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("bench: cannot open " + path);
    out.imbue(std::locale::classic());
    out << "engine,cells,seconds,peak_persistent,peak_transient\n";
    for (const auto& r : records) {
        out << r.engine << ',' << r.cells << ',';
        if (r.oom)
            out << "OOM,0,0\n";
        else
            out << r.seconds << ',' << r.peak_persistent << ',' << r.peak_transient << '\n';
    }
}

}  // namespace onca
