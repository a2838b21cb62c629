#include "amfnet/amf.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace amfnet;
using amfnet::testing::gradcheck;
using amfnet::testing::gradcheck_mode;
using amfnet::testing::parameter_leaves;
using amfnet::testing::projection;

namespace {

AdaptiveWeights constant_weights(double w_depth, std::int64_t n = 1) {
    auto wd = torch::full({n}, w_depth, torch::kFloat64);
    return {1.0 - wd, wd};
}

}  // namespace

TEST_CASE("softmax weights") {
    auto sym = weights_from_logits(torch::zeros({1, 2}));
    CHECK(sym.w_rgb.item<double>() == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(sym.w_depth.item<double>() == doctest::Approx(0.5).epsilon(1e-6));

    auto w = weights_from_logits(torch::tensor({2.0, 0.0}, torch::kFloat64).view({1, 2}));
    const double e2 = std::exp(2.0);
    CHECK(std::abs(w.w_rgb.item<double>() - e2 / (e2 + 1.0)) < 1e-12);
    CHECK(std::abs(w.w_rgb.item<double>() - 0.8808) < 1e-4);
    CHECK(std::abs(w.w_depth.item<double>() - 0.1192) < 1e-4);

    torch::manual_seed(0);
    auto many = weights_from_logits(torch::randn({256, 2}) * 10.0);
    CHECK(((many.w_rgb + many.w_depth - 1.0).abs() < 1e-6).all().item<bool>());
}

TEST_CASE("adaptive masks") {
    auto zero = make_adaptive_masks(constant_weights(0.7), torch::zeros({1, 1, 3, 3}, torch::kFloat64));
    CHECK((zero.m_depth == 0).all().item<bool>());
    CHECK((zero.m_rgb == 1).all().item<bool>());

    auto full = make_adaptive_masks(constant_weights(0.3), torch::ones({1, 1, 2, 2}, torch::kFloat64));
    CHECK(torch::allclose(full.m_depth, torch::full({1, 1, 2, 2}, 0.3, torch::kFloat64)));
    CHECK(torch::allclose(full.m_rgb, torch::full({1, 1, 2, 2}, 0.7, torch::kFloat64)));

    auto mixed = make_adaptive_masks(constant_weights(0.25), torch::tensor({0.0, 1.0}, torch::kFloat64).view({1, 1, 1, 2}));
    CHECK(mixed.m_depth[0][0][0][0].item<double>() == 0.0);
    CHECK(mixed.m_depth[0][0][0][1].item<double>() == 0.25);
    CHECK(mixed.m_rgb[0][0][0][0].item<double>() == 1.0);
    CHECK(mixed.m_rgb[0][0][0][1].item<double>() == 0.75);
}

TEST_CASE("adaptive mask errors") {
    auto mask = torch::ones({1, 1, 2, 2});
    CHECK_THROWS_AS(make_adaptive_masks(constant_weights(1.2), mask), std::invalid_argument);
    CHECK_THROWS_AS(make_adaptive_masks(constant_weights(-0.1), mask), std::invalid_argument);
    CHECK_THROWS_AS(make_adaptive_masks(constant_weights(0.5), torch::full({1, 1, 2, 2}, 0.5)), std::invalid_argument);
    CHECK_THROWS_AS(make_adaptive_masks(constant_weights(0.5, 2), mask), std::invalid_argument);
}

TEST_CASE("masked fusion") {
    torch::manual_seed(1);
    auto rgb = torch::randn({1, 4, 3, 3}, torch::kFloat64);
    auto depth = torch::randn({1, 4, 3, 3}, torch::kFloat64);

    auto none = make_adaptive_masks(constant_weights(0.6), torch::zeros({1, 1, 3, 3}, torch::kFloat64));
    CHECK(torch::equal(masked_fuse(rgb, depth, none), rgb));

    auto all = make_adaptive_masks(constant_weights(1.0), torch::ones({1, 1, 3, 3}, torch::kFloat64));
    CHECK(torch::equal(masked_fuse(rgb, depth, all), depth));

    auto mask = (torch::rand({1, 1, 3, 3}) > 0.5).to(torch::kFloat64);
    auto masks = make_adaptive_masks(constant_weights(0.4), mask);
    auto fused = masked_fuse(rgb, depth, masks);
    auto r = rgb.accessor<double, 4>();
    auto d = depth.accessor<double, 4>();
    auto m = mask.accessor<double, 4>();
    auto f = fused.accessor<double, 4>();
    for (int c = 0; c < 4; ++c) {
        for (int y = 0; y < 3; ++y) {
            for (int x = 0; x < 3; ++x) {
                const double md = 0.4 * m[0][0][y][x];
                const double expected = r[0][c][y][x] * (1.0 - md) + d[0][c][y][x] * md;
                CHECK(f[0][c][y][x] == doctest::Approx(expected).epsilon(1e-14));
                CHECK(f[0][c][y][x] >= std::min(r[0][c][y][x], d[0][c][y][x]) - 1e-12);
                CHECK(f[0][c][y][x] <= std::max(r[0][c][y][x], d[0][c][y][x]) + 1e-12);
            }
        }
    }
    CHECK_THROWS_AS(masked_fuse(rgb, depth.slice(1, 0, 3), masks), std::invalid_argument);
    CHECK_THROWS_AS(masked_fuse(rgb.slice(2, 0, 2), depth.slice(2, 0, 2), masks), std::invalid_argument);
}

TEST_CASE("effective reduction") {
    CHECK(effective_reduction(64, 16) == 16);
    CHECK(effective_reduction(8, 16) == 8);
    CHECK(effective_reduction(1, 16) == 1);
}

TEST_CASE("channel attention contracts") {
    torch::manual_seed(2);
    ChannelAttention ca(8, 4);
    ca->eval();
    torch::NoGradGuard no_grad;
    CHECK((ca->forward(torch::zeros({2, 8, 5, 5})) == 0).all().item<bool>());
    auto x = torch::randn({2, 8, 5, 5});
    auto out = ca->forward(x);
    CHECK(out.sizes() == x.sizes());
    CHECK((out.abs() <= x.abs()).all().item<bool>());
    auto w = ca->weights(x);
    CHECK(((w > 0) & (w < 1)).all().item<bool>());
    CHECK_THROWS_AS(ChannelAttention(4, 8), std::invalid_argument);
}

TEST_CASE("spatial attention contracts") {
    torch::manual_seed(3);
    SpatialAttention sa(8, 7);
    torch::NoGradGuard no_grad;
    CHECK((sa->forward(torch::zeros({2, 8, 9, 9})) == 0).all().item<bool>());
    auto x = torch::randn({2, 8, 9, 9});
    auto out = sa->forward(x);
    CHECK(out.sizes() == x.sizes());
    CHECK((out.abs() <= x.abs()).all().item<bool>());
    CHECK_THROWS_AS(SpatialAttention(8, 4), std::invalid_argument);
    CHECK_THROWS_AS(SpatialAttention(8, 0), std::invalid_argument);
}

TEST_CASE("attention gradients match finite differences") {
    torch::manual_seed(4);
    SUBCASE("channel attention") {
        ChannelAttention ca(4, 2);
        ca->to(torch::kFloat64);
        gradcheck_mode(*ca);
        auto x = torch::randn({2, 4, 3, 3}, torch::kFloat64).requires_grad_();
        auto r = torch::randn({2, 4, 3, 3}, torch::kFloat64);
        auto leaves = parameter_leaves(*ca);
        leaves.push_back({"input", x});
        auto res = gradcheck([&] { return projection(ca->forward(x), r); }, leaves, 1e-6, -1);
        INFO(res.worst);
        CHECK(res.coordinates > 0);
        CHECK(res.max_rel_error < 1e-3);
    }
    SUBCASE("spatial attention") {
        SpatialAttention sa(4, 3);
        sa->to(torch::kFloat64);
        auto x = torch::randn({2, 4, 5, 5}, torch::kFloat64).requires_grad_();
        auto r = torch::randn({2, 4, 5, 5}, torch::kFloat64);
        auto leaves = parameter_leaves(*sa);
        leaves.push_back({"input", x});
        auto res = gradcheck([&] { return projection(sa->forward(x), r); }, leaves, 1e-6, -1);
        INFO(res.worst);
        CHECK(res.max_rel_error < 1e-3);
    }
}

TEST_CASE("amf equals the manual composition") {
    torch::manual_seed(5);
    AMF amf(16);
    amf->eval();
    torch::NoGradGuard no_grad;
    auto rgb = torch::randn({3, 16, 6, 8});
    auto depth = torch::randn({3, 16, 6, 8});
    auto mask = (torch::rand({3, 1, 6, 8}) > 0.4).to(torch::kFloat32);

    auto weights = amf->generator()->forward(rgb, depth);
    auto masks = make_adaptive_masks(weights, mask);
    auto fused = masked_fuse(rgb, depth, masks);
    auto manual = amf->spatial_attention()->forward(amf->channel_attention()->forward(fused));
    CHECK(torch::equal(amf->forward(rgb, depth, mask), manual));

    auto t = amf->forward_traced(rgb, depth, mask);
    CHECK(t.output.sizes() == rgb.sizes());
    CHECK(((t.weights.w_rgb + t.weights.w_depth - 1.0).abs() < 1e-6).all().item<bool>());
    CHECK(((t.masks.m_rgb + t.masks.m_depth - 1.0).abs() < 1e-6).all().item<bool>());
}

TEST_CASE("amf with an empty mask passes RGB through before attention") {
    torch::manual_seed(6);
    AMF amf(8);
    torch::NoGradGuard no_grad;
    auto rgb = torch::randn({2, 8, 4, 4});
    auto t = amf->forward_traced(rgb, torch::randn({2, 8, 4, 4}), torch::zeros({2, 1, 4, 4}));
    CHECK(torch::equal(t.fused, rgb));
}

TEST_CASE("amf is batch independent in both modes") {
    torch::manual_seed(7);
    AMF amf(16);
    auto rgb = torch::randn({4, 16, 6, 8});
    auto depth = torch::randn({4, 16, 6, 8});
    auto mask = (torch::rand({4, 1, 6, 8}) > 0.5).to(torch::kFloat32);
    for (bool training : {false, true}) {
        amf->train(training);
        torch::NoGradGuard no_grad;
        auto whole = amf->forward(rgb, depth, mask);
        std::vector<torch::Tensor> parts;
        for (int i = 0; i < 4; ++i) {
            parts.push_back(amf->forward(rgb.slice(0, i, i + 1), depth.slice(0, i, i + 1), mask.slice(0, i, i + 1)));
        }
        CHECK(torch::allclose(whole, torch::cat(parts, 0), 1e-5, 1e-6));
    }
}

TEST_CASE("amf gradients match finite differences on every parameter group") {
    torch::manual_seed(8);
    AMF amf(8, AMFOptions{4, 3});
    amf->to(torch::kFloat64);
    gradcheck_mode(*amf);
    auto rgb = torch::randn({2, 8, 4, 4}, torch::kFloat64).requires_grad_();
    auto depth = torch::randn({2, 8, 4, 4}, torch::kFloat64).requires_grad_();
    auto mask = (torch::rand({2, 1, 4, 4}) > 0.5).to(torch::kFloat64);
    auto r = torch::randn({2, 8, 4, 4}, torch::kFloat64);
    auto leaves = parameter_leaves(*amf);
    leaves.push_back({"rgb", rgb});
    leaves.push_back({"depth", depth});
    auto res = gradcheck([&] { return projection(amf->forward(rgb, depth, mask), r); }, leaves, 1e-6, -1);
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("amf input errors") {
    AMF amf(8);
    torch::NoGradGuard no_grad;
    CHECK_THROWS_AS(amf->forward(torch::randn({1, 8, 4, 4}), torch::randn({1, 8, 4, 2}), torch::ones({1, 1, 4, 4})),
                    std::invalid_argument);
    CHECK_THROWS_AS(amf->forward(torch::randn({1, 8, 4, 4}), torch::randn({1, 8, 4, 4}), torch::ones({1, 1, 2, 2})),
                    std::invalid_argument);
}
