#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "onca/reference.hpp"
#include "onca/rng.hpp"

using namespace onca;

namespace {

NcaWeights random_weights(int ndim, int C, int H, std::uint64_t seed) {
    NcaWeights w = init_weights({ndim, C, H}, seed);
    Rng rng(mix64(seed ^ 0xF00Dull));
    for (auto& v : w.w2) v = float(rng.next_uniform(-0.2, 0.2));
    for (auto& v : w.b1) v = float(rng.next_uniform(-0.1, 0.1));
    return w;
}

CellGrid random_state(const std::vector<int>& dims, int C, int n, std::uint64_t seed) {
    CellGrid g(GridShape{dims, C}, n);
    Rng rng(seed);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = float(rng.next_uniform(-0.5, 1.0));
    return g;
}

}  // namespace

TEST_CASE("a zero update layer leaves the state unchanged") {
    NcaWeights w = init_weights({2, 16, 64}, 4);
    const CellGrid state = random_state({6, 5}, 16, 1, 9);
    TrackedVec<std::uint8_t> mask(state.cells(), AllocClass::transient, "test_mask");
    for (auto& m : mask) m = 1;
    const CellGrid out = nca_step_reference(state, w, mask);
    for (std::size_t i = 0; i < state.size(); ++i) CHECK(out[i] == state[i]);
}

TEST_CASE("no cell fires, nothing changes") {
    const NcaWeights w = random_weights(2, 16, 64, 12);
    const CellGrid state = random_state({4, 4}, 16, 1, 5);
    TrackedVec<std::uint8_t> mask(state.cells(), AllocClass::transient, "test_mask");
    const CellGrid out = nca_step_reference(state, w, mask);
    for (std::size_t i = 0; i < state.size(); ++i) CHECK(out[i] == state[i]);
}

TEST_CASE("single-cell grid matches the closed form") {
    // With one cell every neighbor is zero-padded, so only the center tap
    // contributes. Evaluate the whole update by independent scalar math.
    const int C = 16, H = 64;
    const NcaWeights w = random_weights(2, C, H, 31);
    CellGrid state(GridShape{{1, 1}, C}, 0);
    Rng rng(77);
    for (int c = 0; c < C; ++c) state[std::size_t(c)] = float(rng.next_uniform(-1, 1));

    TrackedVec<std::uint8_t> mask(1, AllocClass::transient, "test_mask");
    mask[0] = 1;
    const CellGrid out = nca_step_reference(state, w, mask);

    const int K = w.kernel_taps();
    std::vector<double> v(2 * std::size_t(C));
    for (int c = 0; c < C; ++c) {
        v[std::size_t(c)] = state[std::size_t(c)];
        v[std::size_t(C + c)] = double(w.conv[std::size_t(c) * K + 4]) * state[std::size_t(c)];
    }
    std::vector<double> h(std::size_t{0} + H);
    for (int i = 0; i < H; ++i) {
        double z = w.b1[std::size_t(i)];
        for (int j = 0; j < 2 * C; ++j) z += v[std::size_t(j)] * w.w1[std::size_t(j) * H + i];
        h[std::size_t(i)] = std::max(z, 0.0);
    }
    for (int c = 0; c < C; ++c) {
        double delta = 0.0;
        for (int i = 0; i < H; ++i) delta += h[std::size_t(i)] * w.w2[std::size_t(i) * C + c];
        CHECK(out[std::size_t(c)] ==
              doctest::Approx(state[std::size_t(c)] + delta).epsilon(1e-5));
    }
}

TEST_CASE("zero steps is the identity with an empty tape") {
    const NcaWeights w = random_weights(2, 16, 64, 2);
    const CellGrid state = random_state({5, 5}, 16, 1, 3);
    RolloutTape tape;
    const CellGrid out = rollout_reference(state, w, 0, 11, 0, 0.5f, 0, &tape);
    CHECK(tape.steps() == 0);
    for (std::size_t i = 0; i < state.size(); ++i) CHECK(out[i] == state[i]);
}

TEST_CASE("split rollouts compose when step indices continue") {
    const NcaWeights w = random_weights(2, 16, 64, 6);
    const CellGrid state = random_state({7, 6}, 16, 1, 8);

    const CellGrid full = rollout_reference(state, w, 9, 21, 0, 0.5f);
    CellGrid part = rollout_reference(state, w, 4, 21, 0, 0.5f);
    part = rollout_reference(std::move(part), w, 5, 21, 0, 0.5f, /*step_offset=*/4);
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(part[i] == full[i]);
}

TEST_CASE("one step is local to the 3^dim neighborhood") {
    const NcaWeights w = random_weights(2, 16, 64, 13);
    const CellGrid base = random_state({9, 9}, 16, 0, 14);
    CellGrid poked = base;
    poked.at(4 * 9 + 4, 7) += 0.75f;

    TrackedVec<std::uint8_t> mask(base.cells(), AllocClass::transient, "test_mask");
    for (auto& m : mask) m = 1;
    const CellGrid a = nca_step_reference(base, w, mask);
    const CellGrid b = nca_step_reference(poked, w, mask);
    for (int h = 0; h < 9; ++h)
        for (int ww = 0; ww < 9; ++ww) {
            const int cheb = std::max(std::abs(h - 4), std::abs(ww - 4));
            bool same = true;
            for (int c = 0; c < 16; ++c)
                same = same && a.at(std::size_t(h) * 9 + ww, c) == b.at(std::size_t(h) * 9 + ww, c);
            if (cheb > 1) CHECK(same);
        }
}

TEST_CASE("an impulse cannot outrun one cell per step") {
    const NcaWeights w = random_weights(2, 16, 64, 23);
    const CellGrid base = random_state({11, 11}, 16, 0, 24);
    const int k = 3;
    CellGrid poked = base;
    poked.at(2 * 11 + 7, 3) = 2.0f;

    const CellGrid a = rollout_reference(base, w, k, 55, 0, 0.5f);
    const CellGrid b = rollout_reference(poked, w, k, 55, 0, 0.5f);
    for (int h = 0; h < 11; ++h)
        for (int ww = 0; ww < 11; ++ww) {
            const int cheb = std::max(std::abs(h - 2), std::abs(ww - 7));
            if (cheb <= k) continue;
            for (int c = 0; c < 16; ++c)
                CHECK(a.at(std::size_t(h) * 11 + ww, c) == b.at(std::size_t(h) * 11 + ww, c));
        }
}

TEST_CASE("image channels stay bit-identical through a rollout") {
    const NcaWeights w = random_weights(2, 16, 64, 41);
    const CellGrid state = random_state({8, 7}, 16, 2, 42);
    const CellGrid out = rollout_reference(state, w, 17, 4, 0, 0.5f);
    for (std::size_t cell = 0; cell < state.cells(); ++cell)
        for (int c = 0; c < 2; ++c) CHECK(out.at(cell, c) == state.at(cell, c));
}

TEST_CASE("rollouts are bit-deterministic") {
    const NcaWeights w = random_weights(3, 16, 64, 51);
    const CellGrid state = random_state({6, 5, 4}, 16, 1, 52);
    const CellGrid a = rollout_reference(state, w, 12, 99, 2, 0.5f);
    const CellGrid b = rollout_reference(state, w, 12, 99, 2, 0.5f);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("channel mismatches are rejected") {
    const NcaWeights w = random_weights(2, 16, 64, 1);
    const CellGrid state = random_state({4, 4}, 8, 0, 1);
    TrackedVec<std::uint8_t> mask(state.cells(), AllocClass::transient, "test_mask");
    CHECK_THROWS_AS(nca_step_reference(state, w, mask), std::invalid_argument);
}

TEST_CASE("training tape grows linearly with steps") {
    const NcaWeights w = random_weights(2, 16, 64, 61);
    const CellGrid state = random_state({6, 6}, 16, 1, 62);
    RolloutTape t5, t10;
    rollout_reference(state, w, 5, 1, 0, 0.5f, 0, &t5);
    rollout_reference(state, w, 10, 1, 0, 0.5f, 0, &t10);
    CHECK(t5.steps() == 5);
    CHECK(t10.steps() == 10);
    CHECK(t10.states.size() == 2 * t5.states.size());
    CHECK(t10.preacts.size() == 2 * t5.preacts.size());
}
