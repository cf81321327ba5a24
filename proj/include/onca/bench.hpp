#pragma once

#include <string>
#include <vector>

#include "onca/model.hpp"
#include "onca/pyramid.hpp"

namespace onca {

struct BenchRecord {
    std::string engine;
    std::size_t cells = 0;
    double seconds = 0.0;
    std::size_t peak_persistent = 0;
    std::size_t peak_transient = 0;
    bool oom = false;
};

/// Single-level rollout scaling bench: per (engine, size), the median wall
/// time over `repetitions` plus the instrumented peaks of the first run.
/// Out-of-memory at a size records an OOM sentinel and continues.
std::vector<BenchRecord> bench_scaling(const OctreeModel& model,
                                       const std::vector<EngineKind>& engines,
                                       const std::vector<std::vector<int>>& sizes,
                                       int repetitions, int steps, std::uint64_t seed);

/// engine,cells,seconds,peak_persistent,peak_transient — dot-decimal, one
/// row per record.
void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records);

const char* engine_name(EngineKind engine);

}  // namespace onca
