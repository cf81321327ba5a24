#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "onca/optim.hpp"
#include "onca/rng.hpp"
#include "onca/train.hpp"

using namespace onca;

namespace {

CellGrid random_image(const std::vector<int>& dims, int n, std::uint64_t seed) {
    CellGrid g(GridShape{dims, n}, n);
    Rng rng(seed);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = float(rng.next_unit());
    return g;
}

TrainData tiny_dataset(int count, std::uint64_t seed) {
    TrainData data;
    for (int i = 0; i < count; ++i) {
        TrainSample s;
        s.image = random_image({16, 16}, 1, seed + std::uint64_t(i));
        s.mask.resize(s.image.cells());
        for (std::size_t k = 0; k < s.mask.size(); ++k)
            s.mask[k] = s.image[k] > 0.5f ? 1 : 0;
        if (i % 4 == 3)
            data.val.push_back(std::move(s));
        else
            data.train.push_back(std::move(s));
    }
    return data;
}

bool models_identical(const OctreeModel& a, const OctreeModel& b) {
    if (a.levels.size() != b.levels.size()) return false;
    for (std::size_t l = 0; l < a.levels.size(); ++l) {
        if (a.levels[l].conv != b.levels[l].conv) return false;
        if (a.levels[l].w1 != b.levels[l].w1) return false;
        if (a.levels[l].b1 != b.levels[l].b1) return false;
        if (a.levels[l].w2 != b.levels[l].w2) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("dice loss hits its endpoints") {
    const std::size_t cells = 64;
    std::vector<float> target(cells, 0.0f);
    for (std::size_t i = 0; i < cells / 2; ++i) target[i] = 1.0f;

    SUBCASE("perfect overlap is ~0") {
        CHECK(dice_loss(target.data(), target.data(), 1, cells) <= 1e-4);
    }
    SUBCASE("total miss is ~1") {
        std::vector<float> inverted(cells);
        for (std::size_t i = 0; i < cells; ++i) inverted[i] = 1.0f - target[i];
        CHECK(dice_loss(inverted.data(), target.data(), 1, cells) ==
              doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("uniform 0.5 against half foreground is ~0.5") {
        std::vector<float> half(cells, 0.5f);
        // 1 - (2*0.25N + s) / (0.5N + 0.5N + s)
        CHECK(dice_loss(half.data(), target.data(), 1, cells) ==
              doctest::Approx(0.5).epsilon(1e-4));
    }
}

TEST_CASE("the combined loss interpolates exactly between 2*BCE and 2*Dice") {
    const std::size_t cells = 32;
    std::vector<float> probs(cells), target(cells);
    Rng rng(5);
    for (std::size_t i = 0; i < cells; ++i) {
        probs[i] = float(rng.next_uniform(0.05, 0.95));
        target[i] = rng.next_unit() < 0.4 ? 1.0f : 0.0f;
    }
    const double bce = bce_loss(probs.data(), target.data(), 1, cells);
    const double dice = dice_loss(probs.data(), target.data(), 1, cells);
    CHECK(combined_loss(probs.data(), target.data(), 1, cells, 0.0) == 2.0 * bce);
    CHECK(combined_loss(probs.data(), target.data(), 1, cells, 2.0) == 2.0 * dice);
    CHECK(combined_loss(probs.data(), target.data(), 1, cells, 1.0) ==
          doctest::Approx(bce + dice).epsilon(1e-12));
    CHECK_THROWS_AS(combined_loss(probs.data(), target.data(), 1, cells, 2.5),
                    std::invalid_argument);
}

TEST_CASE("the training loss gradient matches finite differences on the logits") {
    for (int classes : {1, 3}) {
        const int C = 16;
        CellGrid state(GridShape{{4, 5}, C}, 1);
        Rng rng(7);
        for (std::size_t i = 0; i < state.size(); ++i)
            state[i] = float(rng.next_uniform(-1.5, 1.5));
        std::vector<std::uint8_t> target(state.cells());
        for (auto& t : target) t = std::uint8_t(rng.next_below(std::uint64_t(classes + 1)) %
                                                std::uint64_t(std::max(classes, 2)));

        CellGrid grad;
        combined_loss_grad(state, classes, target, 1.0, grad);

        const int first_logit = C - classes;
        for (int probe = 0; probe < 20; ++probe) {
            const std::size_t cell = rng.next_below(state.cells());
            const int c = first_logit + int(rng.next_below(std::uint64_t(classes)));
            CellGrid s2 = state;
            const double eps = 1e-3;
            CellGrid tmp;
            s2.at(cell, c) = float(double(state.at(cell, c)) + eps);
            const double lp = combined_loss_grad(s2, classes, target, 1.0, tmp).combined;
            s2.at(cell, c) = float(double(state.at(cell, c)) - eps);
            const double lm = combined_loss_grad(s2, classes, target, 1.0, tmp).combined;
            const double fd = (lp - lm) / (2 * eps);
            CHECK(grad.at(cell, c) == doctest::Approx(fd).epsilon(2e-3));
        }
    }
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
    const PyramidSchedule s = build_schedule({16, 16}, 1, 4);
    OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 1);
    const OctreeModel before = m;
    AdamState adam(m, {});
    std::vector<NcaGradients> grads;
    grads.emplace_back(m.levels[0]);
    adam.apply(m, grads);
    adam.apply(m, grads);
    CHECK(models_identical(m, before));
}

TEST_CASE("adam under a constant gradient approaches lr-sized steps") {
    const PyramidSchedule s = build_schedule({16, 16}, 1, 4);
    OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 1);
    AdamConfig cfg;
    AdamState adam(m, cfg);
    std::vector<NcaGradients> grads;
    grads.emplace_back(m.levels[0]);
    for (auto& g : grads[0].w1) g = 0.37;

    float prev = m.levels[0].w1[0];
    double step_size = 0.0;
    for (int k = 0; k < 300; ++k) {
        adam.apply(m, grads);
        step_size = double(prev) - double(m.levels[0].w1[0]);
        prev = m.levels[0].w1[0];
    }
    CHECK(step_size == doctest::Approx(cfg.lr0).epsilon(0.05));
}

TEST_CASE("the learning rate decays by 0.9992 per epoch, exactly exponential") {
    const PyramidSchedule s = build_schedule({16, 16}, 1, 4);
    OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 1);
    AdamConfig cfg;
    AdamState adam(m, cfg);
    CHECK(adam.lr() == 1.6e-3);
    adam.end_epoch();
    CHECK(adam.lr() == 1.6e-3 * 0.9992);
    for (int e = 1; e < 40; ++e) adam.end_epoch();
    CHECK(adam.lr() == doctest::Approx(1.6e-3 * std::pow(0.9992, 40)).epsilon(1e-12));
}

TEST_CASE("adam aborts on non-finite gradients") {
    const PyramidSchedule s = build_schedule({16, 16}, 1, 4);
    OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 1);
    AdamState adam(m, {});
    std::vector<NcaGradients> grads;
    grads.emplace_back(m.levels[0]);
    grads[0].b1[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam.apply(m, grads), std::runtime_error);
}

TEST_CASE("ema arithmetic") {
    const PyramidSchedule s = build_schedule({16, 16}, 1, 4);
    OctreeModel theta = init_model({2, 16, 64}, s, 1, 1, 2);
    Rng rng(3);
    for (auto& v : theta.levels[0].w2) v = float(rng.next_uniform(-1, 1));

    SUBCASE("0 -> 1 at alpha 0.99 moves by 0.01") {
        OctreeModel shadow = theta;
        OctreeModel ones = theta;
        for (auto& v : shadow.levels[0].b1) v = 0.0f;
        for (auto& v : ones.levels[0].b1) v = 1.0f;
        ema_update(shadow, ones, 0.99);
        CHECK(shadow.levels[0].b1[0] == doctest::Approx(0.01).epsilon(1e-6));
    }
    SUBCASE("a converged shadow is a fixed point, bit-exactly") {
        OctreeModel shadow = theta;
        ema_update(shadow, theta, 0.99);
        CHECK(models_identical(shadow, theta));
    }
    SUBCASE("alpha 0 copies the parameters exactly") {
        OctreeModel shadow = init_model({2, 16, 64}, s, 1, 1, 9);
        ema_update(shadow, theta, 0.0);
        CHECK(models_identical(shadow, theta));
    }
    SUBCASE("the update is a contraction towards theta") {
        OctreeModel shadow = init_model({2, 16, 64}, s, 1, 1, 10);
        for (auto& v : shadow.levels[0].w2) v = float(rng.next_uniform(-2, 2));
        OctreeModel before = shadow;
        ema_update(shadow, theta, 0.99);
        for (std::size_t i = 0; i < theta.levels[0].w2.size(); ++i) {
            const double d0 = std::abs(double(before.levels[0].w2[i]) -
                                       double(theta.levels[0].w2[i]));
            const double d1 = std::abs(double(shadow.levels[0].w2[i]) -
                                       double(theta.levels[0].w2[i]));
            CHECK(d1 <= 0.99 * d0 + 1e-7);
        }
    }
}

TEST_CASE("train config defaults carry the published hyperparameters") {
    const TrainConfig tc;
    CHECK(tc.adam.lr0 == 1.6e-3);
    CHECK(tc.adam.lr_decay == 0.9992);
    CHECK(tc.adam.beta1 == 0.9);
    CHECK(tc.adam.beta2 == 0.99);
    CHECK(tc.ema_alpha == 0.99);
    CHECK(tc.lambda_dice == 1.0);
    CHECK(tc.batch_size == 3);
    CHECK(tc.batches_per_epoch == 200);
    const PyramidSchedule s;
    CHECK(s.refine_steps == 10);
    CHECK(s.alpha0 == 1.0);
    const OctreeModel m;
    CHECK(m.fire_rate == 0.5f);
}

TEST_CASE("patch sampling accepts foreground and rejects empty masks") {
    const PyramidSchedule s = build_schedule({32, 32}, 3, 4);
    std::map<int, std::vector<int>> plan{{1, {8, 8}}, {2, {16, 16}}};
    Rng rng(5);

    std::vector<std::uint8_t> all_fg(32 * 32, 1);
    const PatchSelection sel = sample_patch(all_fg, {32, 32}, s, plan, rng);
    CHECK(sel.patched(2));
    CHECK(sel.patched(1));
    CHECK_FALSE(sel.patched(0));
    // Nested windows: the coarser origin is the finest divided by the factors.
    CHECK(sel.origin.at(1)[0] == sel.origin.at(2)[0] / 2);
    CHECK(sel.origin.at(1)[1] == sel.origin.at(2)[1] / 2);
    CHECK(sel.size.at(2) == std::vector<int>{16, 16});
    CHECK(sel.size.at(1) == std::vector<int>{8, 8});

    std::vector<std::uint8_t> all_bg(32 * 32, 0);
    CHECK_THROWS_AS(sample_patch(all_bg, {32, 32}, s, plan, rng), NoForegroundSample);
}

TEST_CASE("accepted patches always contain foreground") {
    const PyramidSchedule s = build_schedule({32, 32}, 2, 4);
    std::map<int, std::vector<int>> plan{{1, {8, 8}}};
    Rng rng(6);
    std::vector<std::uint8_t> sparse(32 * 32, 0);
    sparse[5 * 32 + 21] = 1;  // single foreground cell
    for (int k = 0; k < 25; ++k) {
        const PatchSelection sel = sample_patch(sparse, {32, 32}, s, plan, rng);
        const auto& o = sel.origin.at(1);
        bool found = false;
        for (int h = 0; h < 8 && !found; ++h)
            for (int w = 0; w < 8 && !found; ++w)
                found = sparse[std::size_t(o[0] + h) * 32 + (o[1] + w)] != 0;
        CHECK(found);
    }
}

TEST_CASE("patch plans must nest through the schedule factors") {
    const PyramidSchedule s = build_schedule({32, 32}, 3, 4);
    std::map<int, std::vector<int>> bad{{1, {8, 8}}, {2, {20, 20}}};
    CHECK_THROWS_AS(validate_patch_plan(s, bad), std::invalid_argument);
    std::map<int, std::vector<int>> gap{{2, {16, 16}}};
    CHECK_NOTHROW(validate_patch_plan(s, gap));
    std::map<int, std::vector<int>> coarse_only{{0, {8, 8}}, {1, {16, 16}}, {2, {32, 32}}};
    CHECK_THROWS_AS(validate_patch_plan(s, coarse_only), std::invalid_argument);
}

TEST_CASE("a zero learning rate leaves the model and shadow untouched") {
    const PyramidSchedule s = build_schedule({16, 16}, 2, 4);
    OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 11);
    const OctreeModel before = m;

    TrainConfig tc;
    tc.adam.lr0 = 0.0;
    tc.epochs = 1;
    tc.batch_size = 2;
    tc.seed = 3;
    const TrainData data = tiny_dataset(6, 21);
    const FitResult r = fit(std::move(m), data, tc);
    CHECK(models_identical(r.model, before));
    CHECK(models_identical(r.shadow, before));
    CHECK(r.epochs_run == 1);
}

TEST_CASE("training is bit-deterministic given the master seed") {
    const PyramidSchedule s = build_schedule({16, 16}, 2, 4);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.seed = 77;
    const TrainData data = tiny_dataset(6, 31);

    const FitResult a = fit(init_model({2, 16, 64}, s, 1, 1, tc.seed), data, tc);
    const FitResult b = fit(init_model({2, 16, 64}, s, 1, 1, tc.seed), data, tc);
    CHECK(models_identical(a.model, b.model));
    CHECK(models_identical(a.shadow, b.shadow));
}

TEST_CASE("hard dice matches its arithmetic examples") {
    SUBCASE("prediction equals target") {
        std::vector<std::uint8_t> t{0, 1, 1, 0, 1};
        const DiceScores d = hard_dice(t, t, 1);
        CHECK(d.per_class[1] == 1.0);
        CHECK(d.mean == 1.0);
    }
    SUBCASE("disjoint masks score zero") {
        std::vector<std::uint8_t> p{1, 1, 0, 0};
        std::vector<std::uint8_t> t{0, 0, 1, 1};
        CHECK(hard_dice(p, t, 1).mean == 0.0);
    }
    SUBCASE("3 predicted, 5 true, 2 overlapping gives 0.5") {
        std::vector<std::uint8_t> p(16, 0), t(16, 0);
        p[0] = p[1] = p[2] = 1;
        t[1] = t[2] = t[3] = t[4] = t[5] = 1;
        CHECK(hard_dice(p, t, 1).per_class[1] == doctest::Approx(0.5));
    }
    SUBCASE("classes absent from both masks are skipped") {
        std::vector<std::uint8_t> p{1, 0, 2, 0};
        std::vector<std::uint8_t> t{1, 0, 2, 2};
        const DiceScores d = hard_dice(p, t, 4);  // class 3 nowhere
        CHECK(std::isnan(d.per_class[3]));
        CHECK(d.mean == doctest::Approx((1.0 + 2.0 * 1 / 3.0) / 2));
    }
}
