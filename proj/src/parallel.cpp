#include "onca/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace onca::par {

namespace {
std::atomic<int> g_workers{0};
}

void set_workers(int n) { g_workers.store(std::max(1, n)); }

int workers() {
    int w = g_workers.load();
    if (w == 0) {
        w = std::max(1u, std::thread::hardware_concurrency());
        g_workers.store(w);
    }
    return w;
}

}  // namespace onca::par
