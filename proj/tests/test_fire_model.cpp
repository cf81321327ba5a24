#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "onca/fire.hpp"
#include "onca/model.hpp"
#include "onca/reference.hpp"
#include "onca/rng.hpp"

using namespace onca;

TEST_CASE("fire gate is a pure function of its inputs") {
    CHECK(fire_value(1, 2, 3, 4) == fire_value(1, 2, 3, 4));
    CHECK(fires(9, 0, 0, 0, 0.5f) == fires(9, 0, 0, 0, 0.5f));
    const FireStream stream(9, 0, 0, 0.5f);
    for (std::uint64_t cell = 0; cell < 64; ++cell)
        CHECK(stream.fires(cell) == fires(9, 0, 0, cell, 0.5f));
}

TEST_CASE("fire frequency stays within 3 sigma of the fire rate") {
    const std::size_t draws = 1u << 20;
    std::size_t fired = 0;
    const FireStream stream(0xDEADBEEF, 1, 7, 0.5f);
    for (std::size_t cell = 0; cell < draws; ++cell) fired += stream.fires(cell);
    const double sigma = std::sqrt(draws * 0.25);
    CHECK(std::abs(double(fired) - 0.5 * draws) < 3.0 * sigma);
}

TEST_CASE("fire streams decorrelate across levels and steps") {
    // Agreement between two distinct streams should sit near 50%.
    const std::size_t draws = 1u << 16;
    std::size_t same_level = 0, same_step = 0;
    for (std::size_t cell = 0; cell < draws; ++cell) {
        same_level += fires(7, 0, 3, cell, 0.5f) == fires(7, 1, 3, cell, 0.5f);
        same_step += fires(7, 0, 3, cell, 0.5f) == fires(7, 0, 4, cell, 0.5f);
    }
    CHECK(std::abs(double(same_level) / draws - 0.5) < 0.02);
    CHECK(std::abs(double(same_step) / draws - 0.5) < 0.02);
}

TEST_CASE("fire values are uniform enough in [0,1)") {
    const std::size_t draws = 1u << 18;
    double acc = 0.0;
    for (std::size_t cell = 0; cell < draws; ++cell) {
        const float u = fire_value(42, 0, 0, cell);
        REQUIRE(u >= 0.0f);
        REQUIRE(u < 1.0f);
        acc += u;
    }
    CHECK(acc / double(draws) == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("init_weights zeroes the update layer and the hidden bias") {
    const NcaWeights w = init_weights({2, 16, 64}, 1234);
    for (float v : w.w2) CHECK(v == 0.0f);
    for (float v : w.b1) CHECK(v == 0.0f);
}

TEST_CASE("init_weights is deterministic per seed and spread across seeds") {
    const NcaWeights a = init_weights({2, 16, 64}, 5);
    const NcaWeights b = init_weights({2, 16, 64}, 5);
    CHECK(a.conv == b.conv);
    CHECK(a.w1 == b.w1);

    const NcaWeights c = init_weights({2, 16, 64}, 6);
    CHECK(a.conv != c.conv);
}

TEST_CASE("init_weights bounds follow 1/sqrt(fan_in)") {
    const NcaWeights w = init_weights({3, 16, 64}, 77);
    const float conv_bound = 1.0f / std::sqrt(27.0f);
    const float w1_bound = 1.0f / std::sqrt(32.0f);
    for (float v : w.conv) CHECK(std::abs(v) <= conv_bound);
    for (float v : w.w1) CHECK(std::abs(v) <= w1_bound);
}

TEST_CASE("count_params matches the layer shapes") {
    const PyramidSchedule s1 = build_schedule({64, 64}, 1, 5);
    OctreeModel m1 = init_model({2, 16, 64}, s1, 1, 1, 0);
    CHECK(count_params(m1) == 3280);

    const PyramidSchedule s5 = build_schedule({320, 320, 24}, 5, 5);
    OctreeModel m5 = init_model({3, 16, 64}, s5, 1, 1, 0);
    CHECK(count_params(m5) == 17840);

    OctreeModel empty;
    CHECK(count_params(empty) == 0);
}

TEST_CASE("a fresh model is a do-nothing automaton") {
    const PyramidSchedule s = build_schedule({12, 12}, 1, 5);
    const OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 99);

    CellGrid img(GridShape{{12, 12}, 1}, 1);
    Rng rng(4);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(rng.next_unit());
    const CellGrid state = seed_from_image(img, 16);
    const CellGrid out = rollout_reference(state, m.levels[0], 25, 3, 0, 0.5f);
    for (std::size_t i = 0; i < state.size(); ++i) CHECK(out[i] == state[i]);
}

TEST_CASE("model files round-trip bit-exactly") {
    const PyramidSchedule s = build_schedule({48, 40}, 3, 5, 1.5, 7);
    OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 0xABCDEF);
    Rng rng(8);
    for (auto& lvl : m.levels)
        for (auto& v : lvl.w2) v = float(rng.next_uniform(-1, 1));

    const std::string path = "roundtrip_test.onca";
    save_model(m, path);
    const OctreeModel r = load_model(path);

    REQUIRE(r.levels.size() == m.levels.size());
    for (std::size_t l = 0; l < m.levels.size(); ++l) {
        CHECK(r.levels[l].conv == m.levels[l].conv);
        CHECK(r.levels[l].w1 == m.levels[l].w1);
        CHECK(r.levels[l].b1 == m.levels[l].b1);
        CHECK(r.levels[l].w2 == m.levels[l].w2);
    }
    CHECK(r.schedule.alpha0 == m.schedule.alpha0);
    CHECK(r.schedule.refine_steps == m.schedule.refine_steps);
    CHECK(r.seed_of_record == m.seed_of_record);
    CHECK(r.fire_rate == m.fire_rate);
    for (int l = 0; l < s.num_levels(); ++l) {
        CHECK(r.schedule.levels[std::size_t(l)].extents == s.levels[std::size_t(l)].extents);
        CHECK(r.schedule.levels[std::size_t(l)].steps == s.levels[std::size_t(l)].steps);
    }
    std::filesystem::remove(path);
}

TEST_CASE("count_params equals the weight blob length over four") {
    const PyramidSchedule s = build_schedule({32, 32}, 2, 5);
    const OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 1);
    const std::string path = "blobsize_test.onca";
    save_model(m, path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::uint32_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 4);
    const std::size_t blob = bytes.size() - 12 - hlen;
    CHECK(blob / 4 == count_params(m));
    std::filesystem::remove(path);
}

TEST_CASE("model loader reports distinct failure modes") {
    const PyramidSchedule s = build_schedule({16, 16}, 1, 5);
    const OctreeModel m = init_model({2, 16, 64}, s, 1, 1, 3);
    const std::string path = "badfile_test.onca";
    save_model(m, path);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    auto write_bytes = [&](const std::string& data) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(data.data(), std::streamsize(data.size()));
    };

    SUBCASE("bad magic") {
        std::string corrupt = bytes;
        corrupt[0] = 'X';
        write_bytes(corrupt);
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    SUBCASE("version mismatch") {
        std::string corrupt = bytes;
        corrupt[4] = 9;
        write_bytes(corrupt);
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("version"),
                             std::runtime_error);
    }
    SUBCASE("truncated blob") {
        write_bytes(bytes.substr(0, bytes.size() - 64));
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("truncated blob"),
                             std::runtime_error);
    }
    SUBCASE("blob longer than the header says") {
        write_bytes(bytes + std::string(16, '\0'));
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("disagrees"),
                             std::runtime_error);
    }
    SUBCASE("truncated header") {
        write_bytes(bytes.substr(0, 10));
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("truncated header"),
                             std::runtime_error);
    }
    std::filesystem::remove(path);
}
