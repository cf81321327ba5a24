#include "onca/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace onca {

PyramidSchedule build_schedule(const std::vector<int>& input_extents, int num_levels,
                               int min_extent, double alpha0, int refine_steps) {
    if (num_levels < 1) throw std::invalid_argument("build_schedule: need at least one level");
    if (input_extents.size() < 2 || input_extents.size() > 3)
        throw std::invalid_argument("build_schedule: need 2 or 3 extents");
    for (int e : input_extents)
        if (e < 1) throw std::invalid_argument("build_schedule: extents must be >= 1");
    if (alpha0 <= 0.0) throw std::invalid_argument("build_schedule: alpha0 must be > 0");
    if (refine_steps < 0) throw std::invalid_argument("build_schedule: refine_steps must be >= 0");

    const int nd = int(input_extents.size());

    // Walk finest -> coarsest; an axis stops halving once the halved extent
    // would fall below min_extent.
    std::vector<LevelSpec> rev;
    rev.push_back({input_extents, std::vector<int>(nd, 1), refine_steps});
    for (int l = 1; l < num_levels; ++l) {
        const std::vector<int>& fine = rev.back().extents;
        std::vector<int> coarse(nd);
        std::vector<int> factors(nd);
        bool any = false;
        for (int a = 0; a < nd; ++a) {
            const int halved = (fine[a] + 1) / 2;
            if (halved >= min_extent) {
                coarse[a] = halved;
                factors[a] = 2;
                any = true;
            } else {
                coarse[a] = fine[a];
                factors[a] = 1;
            }
        }
        if (!any)
            throw std::invalid_argument("build_schedule: too many levels for these extents");
        rev.push_back({std::move(coarse), std::move(factors), refine_steps});
    }

    PyramidSchedule s;
    s.alpha0 = alpha0;
    s.refine_steps = refine_steps;
    s.min_extent = min_extent;
    // The factors recorded while halving are exactly the upsample factors of
    // the coarser level, so reversing the stack keeps every pairing.
    s.levels.assign(rev.rbegin(), rev.rend());

    const int max_extent =
        *std::max_element(s.levels.front().extents.begin(), s.levels.front().extents.end());
    s.levels.front().steps = int(std::ceil(alpha0 * double(max_extent)));
    return s;
}

}  // namespace onca
