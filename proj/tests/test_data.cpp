#include "amfnet/data.hpp"
#include "amfnet/maskgen.hpp"

#include "support.hpp"

#include <doctest.h>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

using namespace amfnet;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> make_ids(int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
    return ids;
}

std::string read_bytes(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Sample tiny_sample(const std::string& id) {
    auto rgb = torch::rand({3, 4, 6});
    auto depth = torch::tensor({0, 100, 65535, 0, 7, 8, 9, 10, 11, 12, 0, 14,
                                15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 0}, torch::kFloat32).view({1, 4, 6});
    auto labels = torch::randint(0, 3, {4, 6}, torch::kInt64);
    return Sample(RGBImage(rgb), DepthImage(depth), LabelMap(labels), id);
}

}  // namespace

TEST_CASE("split sizes follow the rounded ratios") {
    auto four = split(make_ids(4), 0);
    CHECK(four.train.size() == 2);
    CHECK(four.val.size() == 1);
    CHECK(four.test.size() == 1);

    auto full = split(make_ids(8752), 1);
    CHECK(full.train.size() == 4376);
    CHECK(full.val.size() == 2188);
    CHECK(full.test.size() == 2188);

    std::set<std::string> all;
    for (const auto* part : {&full.train, &full.val, &full.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == 8752);
}

TEST_CASE("split is deterministic under a seed") {
    auto a = split(make_ids(50), 42);
    auto b = split(make_ids(50), 42);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    auto c = split(make_ids(50), 43);
    CHECK(a.train != c.train);
}

TEST_CASE("split errors") {
    CHECK_THROWS_AS(split({}, 0), std::invalid_argument);
    CHECK_THROWS_AS(split(make_ids(4), 0, {0.5, 0.5, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(split(make_ids(4), 0, {-0.5, 1.0, 0.5}), std::invalid_argument);
}

TEST_CASE("invalid pixel count is the ceiling of the product") {
    CHECK(invalid_pixel_count(0.4, {96, 128}) == 4916);
    CHECK(invalid_pixel_count(0.0, {96, 128}) == 0);
    CHECK(invalid_pixel_count(1.0, {96, 128}) == 12288);
    CHECK(invalid_pixel_count(0.5, {32, 32}) == 512);
    CHECK(invalid_pixel_count(0.001, {32, 32}) == 2);
}

TEST_CASE("synthetic scenes honour the invalid fraction exactly") {
    SynthParams p;
    for (double f : {0.0, 0.4, 1.0}) {
        p.invalid_fraction = f;
        for (std::uint64_t seed : {0U, 1U, 2U}) {
            p.seed = seed;
            auto s = synth_scene(p);
            auto mask = generate_mask(s.depth.data());
            CHECK(static_cast<std::int64_t>((mask == 0).sum().item<double>()) == invalid_pixel_count(f, p.resolution));
        }
    }
    p.invalid_fraction = 0.4;
    auto s = synth_scene(p);
    CHECK((generate_mask(s.depth.data()) == 0).sum().item<double>() == 4916);
}

TEST_CASE("synthetic scenes are a pure function of params") {
    SynthParams p;
    p.seed = 9;
    auto a = synth_scene(p);
    auto b = synth_scene(p);
    CHECK(torch::equal(a.rgb.data(), b.rgb.data()));
    CHECK(torch::equal(a.depth.data(), b.depth.data()));
    CHECK(torch::equal(a.label.data(), b.label.data()));
    p.seed = 10;
    CHECK_FALSE(torch::equal(synth_scene(p).label.data(), a.label.data()));
}

TEST_CASE("synthetic scenes contain all three classes") {
    SynthParams p;
    p.seed = 3;
    auto s = synth_scene(p);
    CHECK(s.shape() == p.resolution);
    for (int c = 0; c < kNumClasses; ++c) CHECK((s.label.data() == c).any().item<bool>());
}

TEST_CASE("synthetic parameter errors") {
    SynthParams p;
    p.obstacle_count = 500;
    CHECK_THROWS_AS(synth_scene(p), std::invalid_argument);
    p = {};
    p.invalid_fraction = 1.5;
    CHECK_THROWS_AS(synth_scene(p), std::invalid_argument);
    p = {};
    p.resolution = {90, 128};
    CHECK_THROWS_AS(synth_scene(p), std::invalid_argument);
    p = {};
    p.road_fraction = 0.0;
    CHECK_THROWS_AS(synth_scene(p), std::invalid_argument);
}

TEST_CASE("sample write/load round-trip") {
    testing::TempDir dir("data_rt");
    torch::manual_seed(1);
    auto s = tiny_sample("a");
    write_sample(dir.path(), s);
    auto back = load_sample(dir.path(), "a");
    CHECK(back.shape() == s.shape());
    CHECK(torch::equal(back.depth.data(), s.depth.data()));
    CHECK(torch::equal(back.label.data(), s.label.data()));
    CHECK(torch::allclose(back.rgb.data(), s.rgb.data(), 0.0, 0.5 / 255.0 + 1e-6));
    auto mask = generate_mask(back.depth.data());
    CHECK(mask[0][0][0].item<float>() == 0.0F);
    CHECK(mask[0][0][1].item<float>() == 1.0F);
}

TEST_CASE("load errors name the file") {
    testing::TempDir dir("data_err");
    torch::manual_seed(2);
    write_sample(dir.path(), tiny_sample("ok"));

    try {
        load_sample(dir.path(), "absent");
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("absent.png") != std::string::npos);
    }

    write_sample(dir.path(), tiny_sample("bad"));
    cv::Mat label(4, 6, CV_8UC1, cv::Scalar(3));
    cv::imwrite((dir.path() / "labels" / "bad.png").string(), label);
    try {
        load_sample(dir.path(), "bad");
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("bad.png") != std::string::npos);
    }

    write_sample(dir.path(), tiny_sample("shape"));
    cv::imwrite((dir.path() / "labels" / "shape.png").string(), cv::Mat(5, 6, CV_8UC1, cv::Scalar(0)));
    CHECK_THROWS_AS(load_sample(dir.path(), "shape"), std::runtime_error);

    write_sample(dir.path(), tiny_sample("fmt"));
    cv::imwrite((dir.path() / "depth" / "fmt.png").string(), cv::Mat(4, 6, CV_8UC1, cv::Scalar(1)));
    CHECK_THROWS_AS(load_sample(dir.path(), "fmt"), std::runtime_error);
}

TEST_CASE("sample construction rejects mismatched grids") {
    CHECK_THROWS_AS(Sample(RGBImage(torch::rand({3, 4, 4})), DepthImage(torch::ones({1, 4, 5})),
                           LabelMap(torch::zeros({4, 4}, torch::kInt64)), "x"),
                    std::invalid_argument);
}

TEST_CASE("synthetic corpus is byte-identical across runs and loads back") {
    testing::TempDir a("corpus_a");
    testing::TempDir b("corpus_b");
    SynthParams p;
    p.resolution = {64, 64};
    p.seed = 7;
    auto ids = write_synthetic_corpus(a.path(), p, 4, 7);
    write_synthetic_corpus(b.path(), p, 4, 7);
    CHECK(ids.train.size() == 2);
    CHECK(ids.val.size() == 1);
    CHECK(ids.test.size() == 1);
    for (const auto& sub : {"rgb", "depth", "labels"}) {
        for (int i = 0; i < 4; ++i) {
            const auto name = "synth_000" + std::to_string(i) + ".png";
            CHECK(read_bytes(a.path() / sub / name) == read_bytes(b.path() / sub / name));
        }
    }
    CHECK(read_bytes(a.path() / "manifest.json") == read_bytes(b.path() / "manifest.json"));

    auto manifest = read_manifest(a.path());
    CHECK(manifest.train == ids.train);
    auto train = load_split(a.path(), "train");
    CHECK(train.size() == 2);
    CHECK_THROWS_AS(load_split(a.path(), "holdout"), std::invalid_argument);
    CHECK_THROWS_AS(read_manifest(a.path() / "nowhere"), std::runtime_error);
}

TEST_CASE("flip, resize, quantile and collate") {
    torch::manual_seed(3);
    auto s = tiny_sample("t");
    auto f = hflip(s);
    CHECK(torch::equal(f.label.data().flip({1}), s.label.data()));
    CHECK(torch::equal(hflip(f).depth.data(), s.depth.data()));

    SynthParams p;
    auto big = synth_scene(p);
    auto small = resize_sample(big, {32, 64});
    CHECK(small.shape() == Shape2d{32, 64});
    CHECK((small.label.data() <= 2).all().item<bool>());
    auto depth_values = std::get<0>(torch::_unique(big.depth.data()));
    CHECK(torch::isin(small.depth.data(), depth_values).all().item<bool>());

    std::vector<Sample> one{s};
    CHECK(depth_quantile(one, 1.0) == 65535.0);
    CHECK(depth_quantile(one, 0.0) == 7.0);
    std::vector<Sample> empty{Sample(RGBImage(torch::rand({3, 2, 2})), DepthImage(torch::zeros({1, 2, 2})),
                                     LabelMap(torch::zeros({2, 2}, torch::kInt64)), "z")};
    CHECK(depth_quantile(empty, 0.99) == 1.0);

    std::vector<Sample> pair{s, f};
    auto batch = collate(pair);
    CHECK(batch.rgb.sizes().vec() == std::vector<std::int64_t>{2, 3, 4, 6});
    CHECK(batch.depth.sizes().vec() == std::vector<std::int64_t>{2, 1, 4, 6});
    CHECK(batch.labels.sizes().vec() == std::vector<std::int64_t>{2, 4, 6});
    CHECK(batch.ids == std::vector<std::string>{"t", "t"});
    CHECK_THROWS_AS(collate(std::span<const Sample>()), std::invalid_argument);
}
