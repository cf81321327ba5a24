#pragma once

#include <cstddef>

namespace onca::par {

/// Process-wide worker count for data-parallel loops. Results are required to
/// be bit-identical for any value; this only tunes throughput.
void set_workers(int n);
int workers();

/// Fixed block size used by deterministic reductions. Partial sums are formed
/// per block and combined in ascending block order, so the summation order is
/// independent of the worker count.
inline constexpr std::size_t kReduceBlock = 4096;

/// Runs fn(begin, end) over [0, n) split into ranges. Writes into disjoint
/// output slots only; no ordering guarantees between ranges.
template <typename Fn>
void for_ranges(std::size_t n, Fn&& fn);

}  // namespace onca::par

#include <omp.h>

namespace onca::par {

template <typename Fn>
void for_ranges(std::size_t n, Fn&& fn) {
    if (n == 0) return;
    const int w = workers();
    if (w <= 1 || n < 2 * kReduceBlock) {
        fn(std::size_t{0}, n);
        return;
    }
#pragma omp parallel num_threads(w)
    {
        const int nt = omp_get_num_threads();
        const int id = omp_get_thread_num();
        const std::size_t chunk = (n + nt - 1) / nt;
        const std::size_t b = std::size_t(id) * chunk;
        const std::size_t e = b + chunk < n ? b + chunk : n;
        if (b < e) fn(b, e);
    }
}

}  // namespace onca::par
