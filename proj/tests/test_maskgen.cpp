#include "amfnet/maskgen.hpp"

#include <doctest.h>

#include <cmath>

using namespace amfnet;

namespace {

// Element-by-element nearest-neighbour resampling, floor(i * src / dst).
torch::Tensor brute_force_nearest(const torch::Tensor& grid, Shape2d out) {
    const auto h = grid.size(-2);
    const auto w = grid.size(-1);
    auto src = grid.reshape({h, w}).to(torch::kFloat64).contiguous();
    auto a = src.accessor<double, 2>();
    auto dst = torch::empty({out.height, out.width}, torch::kFloat64);
    auto b = dst.accessor<double, 2>();
    for (std::int64_t i = 0; i < out.height; ++i) {
        const auto si = static_cast<std::int64_t>(std::floor(static_cast<double>(i) * h / out.height));
        for (std::int64_t j = 0; j < out.width; ++j) {
            const auto sj = static_cast<std::int64_t>(std::floor(static_cast<double>(j) * w / out.width));
            b[i][j] = a[si][sj];
        }
    }
    return dst;
}

}  // namespace

TEST_CASE("generate_mask thresholds at zero") {
    CHECK(torch::equal(generate_mask(torch::zeros({1, 4, 4})), torch::zeros({1, 4, 4})));
    auto depth = torch::tensor({0.0F, 1200.0F, 65535.0F, 0.0F}).view({1, 2, 2});
    auto expected = torch::tensor({0.0F, 1.0F, 1.0F, 0.0F}).view({1, 2, 2});
    CHECK(torch::equal(generate_mask(depth), expected));
}

TEST_CASE("generate_mask preserves the zero count") {
    torch::manual_seed(11);
    for (int k : {0, 1, 100, 2048, 4096}) {
        auto depth = torch::rand({1, 64, 64}) * 5000.0 + 1.0;
        auto flat = depth.view({-1});
        flat.index_put_({torch::randperm(64 * 64).slice(0, 0, k)}, 0.0);
        auto mask = generate_mask(depth);
        CHECK(mask.sum().item<double>() == 64 * 64 - k);
        CHECK(((mask == 0) | (mask == 1)).all().item<bool>());
    }
}

TEST_CASE("generate_mask rejects negative or non-finite depth") {
    CHECK_THROWS_AS(generate_mask(torch::full({1, 2, 2}, -1.0)), std::invalid_argument);
    CHECK_THROWS_AS(generate_mask(torch::full({1, 2, 2}, std::nan(""))), std::invalid_argument);
    CHECK_THROWS_AS(DepthImage(torch::full({1, 2, 2}, -5.0)), std::invalid_argument);
}

TEST_CASE("generate_mask on DepthImage returns a Mask") {
    auto m = generate_mask(DepthImage(torch::tensor({0.0F, 3.0F}).view({1, 1, 2})));
    CHECK(m.data()[0][0][0].item<float>() == 0.0F);
    CHECK(m.data()[0][0][1].item<float>() == 1.0F);
}

TEST_CASE("stage shapes follow the stride schedule") {
    auto s = stage_shapes({288, 512});
    CHECK(s[0] == Shape2d{144, 256});
    CHECK(s[1] == Shape2d{72, 128});
    CHECK(s[2] == Shape2d{36, 64});
    CHECK(s[3] == Shape2d{18, 32});
    CHECK(s[4] == Shape2d{9, 16});
    for (int n = 1; n < kNumStages; ++n) {
        CHECK(s[n].height * 2 == s[n - 1].height);
        CHECK(s[n].width * 2 == s[n - 1].width);
    }
    CHECK_THROWS_AS(stage_shapes({100, 128}), std::invalid_argument);
    CHECK_THROWS_AS(stage_shapes({0, 128}), std::invalid_argument);
}

TEST_CASE("constant masks stay constant at every level") {
    const auto shapes = stage_shapes({288, 512});
    for (float v : {0.0F, 1.0F}) {
        auto p = build_pyramid(torch::full({1, 288, 512}, v), shapes);
        for (int n = 0; n < kNumStages; ++n) {
            CHECK(p.levels[n].size(1) == shapes[n].height);
            CHECK(p.levels[n].size(2) == shapes[n].width);
            CHECK((p.levels[n] == v).all().item<bool>());
        }
    }
}

TEST_CASE("checkerboard downsample picks the nearest-neighbour elements") {
    auto board = torch::tensor({1.0F, 0.0F, 1.0F, 0.0F,  //
                                0.0F, 1.0F, 0.0F, 1.0F,  //
                                1.0F, 0.0F, 1.0F, 0.0F,  //
                                0.0F, 1.0F, 0.0F, 1.0F})
                     .view({1, 4, 4});
    auto out = nearest_downsample(board, {2, 2});
    CHECK(torch::equal(out.reshape({2, 2}).to(torch::kFloat64), brute_force_nearest(board, {2, 2})));
    CHECK((out == 1).all().item<bool>());  // rows/cols 0 and 2
}

TEST_CASE("nearest index is exact integer floor") {
    CHECK(nearest_source_index(0, 288, 144) == 0);
    CHECK(nearest_source_index(5, 288, 144) == 10);
    CHECK(nearest_source_index(2, 7, 3) == 4);
    CHECK(nearest_source_index(1, 5, 2) == 2);
}

TEST_CASE("pyramid matches the brute-force oracle and only copies values") {
    torch::manual_seed(5);
    const auto shapes = stage_shapes({96, 128});
    for (int trial = 0; trial < 5; ++trial) {
        auto mask = (torch::rand({1, 96, 128}) > 0.5).to(torch::kFloat32);
        auto p = build_pyramid(mask, shapes);
        for (int n = 0; n < kNumStages; ++n) {
            CHECK(torch::equal(p.levels[n].reshape({shapes[n].height, shapes[n].width}).to(torch::kFloat64),
                               brute_force_nearest(mask, shapes[n])));
            CHECK(((p.levels[n] == 0) | (p.levels[n] == 1)).all().item<bool>());
        }
    }
}

TEST_CASE("non-power-of-two downsample matches the oracle") {
    torch::manual_seed(6);
    auto grid = torch::randint(0, 2, {1, 13, 17}).to(torch::kFloat32);
    auto out = nearest_downsample(grid, {5, 7});
    CHECK(torch::equal(out.reshape({5, 7}).to(torch::kFloat64), brute_force_nearest(grid, {5, 7})));
}

TEST_CASE("pyramid errors") {
    auto mask = torch::ones({1, 64, 64});
    auto bigger = stage_shapes({64, 64});
    bigger[0] = {128, 128};
    bigger[1] = {64, 64};
    CHECK_THROWS_AS(build_pyramid(mask, bigger), std::invalid_argument);
    auto flat = stage_shapes({64, 64});
    flat[2] = flat[1];
    CHECK_THROWS_AS(build_pyramid(mask, flat), std::invalid_argument);
    CHECK_THROWS_AS(build_pyramid(torch::full({1, 64, 64}, 0.5), stage_shapes({64, 64})), std::invalid_argument);
}
