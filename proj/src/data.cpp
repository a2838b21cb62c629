#include "amfnet/data.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace amfnet {

namespace fs = std::filesystem;

Sample::Sample(RGBImage rgb_, DepthImage depth_, LabelMap label_, std::string id_)
    : rgb(std::move(rgb_)), depth(std::move(depth_)), label(std::move(label_)), id(std::move(id_)) {
    if (rgb.shape() != label.shape() || depth.shape() != label.shape()) {
        throw std::invalid_argument("sample '" + id + "': rgb " + to_string(rgb.shape()) + ", depth " +
                                    to_string(depth.shape()) + " and label " + to_string(label.shape()) +
                                    " grids differ in size");
    }
}

void SynthParams::validate() const {
    if (resolution.height <= 0 || resolution.width <= 0 || resolution.height % 32 != 0 || resolution.width % 32 != 0) {
        throw std::invalid_argument("synth: resolution must be a positive multiple of 32");
    }
    if (!(invalid_fraction >= 0.0 && invalid_fraction <= 1.0)) throw std::invalid_argument("synth: invalid_fraction outside [0,1]");
    if (!(road_fraction > 0.0 && road_fraction < 1.0)) throw std::invalid_argument("synth: road_fraction outside (0,1)");
    if (obstacle_count < 0) throw std::invalid_argument("synth: obstacle_count must be non-negative");
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) throw std::invalid_argument("synth: noise_level must be non-negative");
}

std::int64_t invalid_pixel_count(double fraction, Shape2d resolution) {
    const double v = fraction * static_cast<double>(resolution.height * resolution.width);
    const double r = std::round(v);
    if (std::abs(v - r) <= 1e-9 * std::max(1.0, v)) return static_cast<std::int64_t>(r);
    return static_cast<std::int64_t>(std::ceil(v));
}

std::uint64_t sample_seed(std::uint64_t corpus_seed, std::uint64_t index) {
    // splitmix64 of the pair
    std::uint64_t z = corpus_seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// --- synthetic scenes ------------------------------------------------------------

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Bilinearly interpolated random lattice in [-1,1], lattice spacing `cell` px.
std::vector<float> value_noise(std::int64_t h, std::int64_t w, double cell, Rng& rng) {
    const auto gh = static_cast<std::int64_t>(std::ceil(static_cast<double>(h) / cell)) + 2;
    const auto gw = static_cast<std::int64_t>(std::ceil(static_cast<double>(w) / cell)) + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gh * gw));
    for (auto& v : lattice) v = uniform(rng, -1.0, 1.0);
    std::vector<float> out(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        const double fy = static_cast<double>(y) / cell;
        const auto y0 = static_cast<std::int64_t>(fy);
        const double ty = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const auto x0 = static_cast<std::int64_t>(fx);
            const double tx = fx - static_cast<double>(x0);
            auto at = [&](std::int64_t yy, std::int64_t xx) { return lattice[static_cast<std::size_t>(yy * gw + xx)]; };
            const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
            const double bottom = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
            out[static_cast<std::size_t>(y * w + x)] = static_cast<float>(top * (1 - ty) + bottom * ty);
        }
    }
    return out;
}

struct Ellipse {
    double cy, cx, ry, rx;
    double r2(double y, double x) const {
        const double dy = (y - cy) / ry;
        const double dx = (x - cx) / rx;
        return dy * dy + dx * dx;
    }
};

// Marks exactly `target` cells of `invalid` as true, grown as contiguous
// 4-connected blobs from random seeds.
void place_invalid_blobs(std::vector<char>& invalid, std::int64_t h, std::int64_t w, std::int64_t target, Rng& rng) {
    const std::int64_t n = h * w;
    std::int64_t placed = 0;
    std::vector<std::int64_t> free_cells;
    while (placed < target) {
        free_cells.clear();
        for (std::int64_t i = 0; i < n; ++i) {
            if (!invalid[static_cast<std::size_t>(i)]) free_cells.push_back(i);
        }
        const auto seed = free_cells[std::uniform_int_distribution<std::size_t>(0, free_cells.size() - 1)(rng)];
        const auto blob_max = std::max<std::int64_t>(1, static_cast<std::int64_t>(uniform(rng, 0.02, 0.10) * static_cast<double>(n)));
        const auto blob_target = std::min(target - placed, blob_max);
        std::vector<std::int64_t> frontier{seed};
        std::int64_t grown = 0;
        while (grown < blob_target && !frontier.empty()) {
            const auto pick = std::uniform_int_distribution<std::size_t>(0, frontier.size() - 1)(rng);
            const auto cell = frontier[pick];
            frontier[pick] = frontier.back();
            frontier.pop_back();
            if (invalid[static_cast<std::size_t>(cell)]) continue;
            invalid[static_cast<std::size_t>(cell)] = 1;
            ++grown;
            const auto y = cell / w;
            const auto x = cell % w;
            if (y > 0) frontier.push_back(cell - w);
            if (y + 1 < h) frontier.push_back(cell + w);
            if (x > 0) frontier.push_back(cell - 1);
            if (x + 1 < w) frontier.push_back(cell + 1);
        }
        placed += grown;
    }
}

}  // namespace

Sample synth_scene(const SynthParams& p) {
    p.validate();
    Rng rng(p.seed);
    const auto h = p.resolution.height;
    const auto w = p.resolution.width;
    const auto n = h * w;
    const auto hd = static_cast<double>(h);
    const auto wd = static_cast<double>(w);
    auto idx = [w](std::int64_t y, std::int64_t x) { return static_cast<std::size_t>(y * w + x); };

    // Road: the road_count lowest-scoring pixels below the horizon, scored by
    // perspective-normalised distance from a slanted centre line.
    const auto road_count = std::max<std::int64_t>(1, std::llround(p.road_fraction * static_cast<double>(n)));
    const auto rows_needed = static_cast<std::int64_t>(std::ceil(1.3 * static_cast<double>(road_count) / wd)) + 1;
    auto horizon = static_cast<std::int64_t>(hd * uniform(rng, 0.30, 0.42));
    horizon = std::clamp<std::int64_t>(std::min(horizon, h - rows_needed), 0, h - 2);
    const double cx_top = wd * uniform(rng, 0.42, 0.58);
    const double cx_bottom = wd * uniform(rng, 0.35, 0.65);
    auto centre = [&](double y) { return cx_top + (cx_bottom - cx_top) * (y - horizon) / (hd - 1 - horizon); };

    std::vector<double> score(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (std::int64_t y = horizon + 1; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            score[idx(y, x)] = std::abs(static_cast<double>(x) + 0.5 - centre(static_cast<double>(y))) /
                               static_cast<double>(y - horizon);
        }
    }
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[static_cast<std::size_t>(a)] < score[static_cast<std::size_t>(b)]; });
    std::vector<std::uint8_t> label(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < road_count; ++i) label[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

    // Obstacles: ellipses whose size follows perspective, clipped to the road.
    const double ground_rows = hd - 1 - static_cast<double>(horizon);
    const double rx_max = std::max(2.0, 0.2 * wd);
    const double ry_max = std::max(1.5, 0.5 * rx_max);
    const double obstacle_area = p.obstacle_count * std::numbers::pi * rx_max * ry_max;
    if (obstacle_area > static_cast<double>(road_count)) {
        throw std::invalid_argument("synth: obstacle area (" + std::to_string(obstacle_area) + " px) exceeds road area (" +
                                    std::to_string(road_count) + " px)");
    }
    std::vector<std::int64_t> road_cells;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto y = i / w;
        if (label[static_cast<std::size_t>(i)] == 1 && static_cast<double>(y - horizon) > 0.35 * ground_rows) road_cells.push_back(i);
    }
    if (road_cells.empty()) road_cells.push_back(order[0]);
    std::vector<Ellipse> obstacles;
    for (int k = 0; k < p.obstacle_count; ++k) {
        const auto c = road_cells[std::uniform_int_distribution<std::size_t>(0, road_cells.size() - 1)(rng)];
        const double cy = static_cast<double>(c / w);
        const double persp = std::clamp((cy - horizon) / ground_rows, 0.2, 1.0);
        const double rx = std::max(1.5, rx_max * persp * uniform(rng, 0.6, 1.0));
        obstacles.push_back({cy, static_cast<double>(c % w), std::max(1.0, 0.5 * rx), rx});
    }
    std::vector<float> dip(static_cast<std::size_t>(n), 0.0F);  // depression depth profile in [0,1]
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            if (label[idx(y, x)] == 0) continue;
            for (const auto& e : obstacles) {
                const double r2 = e.r2(static_cast<double>(y), static_cast<double>(x));
                if (r2 <= 1.0) {
                    label[idx(y, x)] = 2;
                    dip[idx(y, x)] = std::max(dip[idx(y, x)], static_cast<float>(1.0 - 0.6 * r2));
                }
            }
        }
    }

    // Shadow distractors: dark RGB patches that leave depth untouched.
    std::vector<Ellipse> shadows;
    const int shadow_count = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int k = 0; k < shadow_count; ++k) {
        const double cy = uniform(rng, horizon + 0.3 * ground_rows, hd);
        const double cx = uniform(rng, 0.0, wd);
        const double rx = rx_max * uniform(rng, 0.6, 1.3);
        shadows.push_back({cy, cx, 0.5 * rx * uniform(rng, 0.7, 1.3), rx});
    }

    const auto terrain = value_noise(h, w, 10.0, rng);
    const auto grain = value_noise(h, w, 2.0, rng);
    const auto bumps = value_noise(h, w, 6.0, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto rgb = torch::empty({3, h, w}, torch::kFloat32);
    auto depth = torch::empty({1, h, w}, torch::kFloat32);
    auto rgb_a = rgb.accessor<float, 3>();
    auto depth_a = depth.accessor<float, 3>();
    const double near_mm = 2000.0;
    const double far_mm = 20000.0;
    for (std::int64_t y = 0; y < h; ++y) {
        const double rows_below = static_cast<double>(y - horizon) + 0.5;
        const double plane = y > horizon ? std::min(far_mm, near_mm * (ground_rows + 0.5) / rows_below) : far_mm;
        for (std::int64_t x = 0; x < w; ++x) {
            const auto i = idx(y, x);
            std::array<double, 3> c{};
            double d = plane;
            if (y <= horizon) {
                const double t = static_cast<double>(y) / std::max<double>(1.0, horizon);
                c = {0.55 + 0.25 * t, 0.68 + 0.2 * t, 0.92};
            } else if (label[i] == 0) {
                const double v = 0.08 * terrain[i] + 0.05 * grain[i];
                c = {0.36 + v, 0.44 + v, 0.24 + 0.5 * v};
                d = plane * (1.0 - 0.06 * (1.0 + bumps[i]));
            } else {
                const double v = 0.05 * grain[i] + 0.02 * terrain[i];
                c = {0.47 + v, 0.47 + v, 0.49 + v};
                if (label[i] == 2) {
                    const double k = 1.0 - 0.35 * dip[i];
                    c = {(0.40 + v) * k, (0.33 + v) * k, (0.24 + v) * k};
                    d = plane * (1.0 + 0.3 * dip[i]);
                }
            }
            for (const auto& s : shadows) {
                if (y > horizon && s.r2(static_cast<double>(y), static_cast<double>(x)) <= 1.0) {
                    for (auto& ch : c) ch *= 0.62;
                }
            }
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(c[static_cast<std::size_t>(ch)] + p.noise_level * gauss(rng), 0.0, 1.0);
                rgb_a[ch][y][x] = static_cast<float>(std::round(v * 255.0) / 255.0);
            }
            d *= 1.0 + 0.1 * p.noise_level * gauss(rng);
            depth_a[0][y][x] = static_cast<float>(std::clamp(std::round(d), 1.0, 65535.0));
        }
    }

    std::vector<char> invalid(static_cast<std::size_t>(n), 0);
    place_invalid_blobs(invalid, h, w, invalid_pixel_count(p.invalid_fraction, p.resolution), rng);
    for (std::int64_t i = 0; i < n; ++i) {
        if (invalid[static_cast<std::size_t>(i)]) depth_a[0][i / w][i % w] = 0.0F;
    }

    auto labels = torch::from_blob(label.data(), {h, w}, torch::kUInt8).to(torch::kInt64);
    return Sample(RGBImage(rgb), DepthImage(depth), LabelMap(labels), "synth");
}

// --- files ----------------------------------------------------------------------

namespace {

cv::Mat read_png(const fs::path& file, int expected_type) {
    if (!fs::exists(file)) throw std::runtime_error("missing file: " + file.string());
    cv::Mat img = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw std::runtime_error("cannot decode image: " + file.string());
    if (img.type() != expected_type) {
        throw std::runtime_error("unexpected pixel format in " + file.string() + " (got type " +
                                 std::to_string(img.type()) + ", expected " + std::to_string(expected_type) + ")");
    }
    return img;
}

void write_png(const fs::path& file, const cv::Mat& img) {
    fs::create_directories(file.parent_path());
    if (!cv::imwrite(file.string(), img)) throw std::runtime_error("cannot write image: " + file.string());
}

}  // namespace

RGBImage load_rgb(const fs::path& file) {
    cv::Mat bgr = read_png(file, CV_8UC3);
    cv::Mat rgb8;
    cv::cvtColor(bgr, rgb8, cv::COLOR_BGR2RGB);
    auto rgb = torch::from_blob(rgb8.data, {rgb8.rows, rgb8.cols, 3}, torch::kUInt8).permute({2, 0, 1});
    return RGBImage(rgb.to(torch::kFloat32) / 255.0);
}

DepthImage load_depth(const fs::path& file) {
    cv::Mat depth16 = read_png(file, CV_16UC1);
    cv::Mat depth32;
    depth16.convertTo(depth32, CV_32F);
    return DepthImage(torch::from_blob(depth32.data, {1, depth32.rows, depth32.cols}, torch::kFloat32).clone());
}

Sample load_sample(const fs::path& root, const std::string& id) {
    const auto rgb_file = root / "rgb" / (id + ".png");
    const auto depth_file = root / "depth" / (id + ".png");
    const auto label_file = root / "labels" / (id + ".png");

    auto rgb = load_rgb(rgb_file);
    auto depth = load_depth(depth_file);
    cv::Mat label8 = read_png(label_file, CV_8UC1);

    if (rgb.shape() != depth.shape() || rgb.shape() != Shape2d{label8.rows, label8.cols}) {
        throw std::runtime_error("shape mismatch between " + rgb_file.string() + ", " + depth_file.string() + " and " +
                                 label_file.string());
    }
    double max_label = 0.0;
    cv::minMaxLoc(label8, nullptr, &max_label);
    if (max_label >= kNumClasses) {
        throw std::runtime_error("illegal label index " + std::to_string(static_cast<int>(max_label)) + " in " +
                                 label_file.string());
    }
    auto labels = torch::from_blob(label8.data, {label8.rows, label8.cols}, torch::kUInt8).to(torch::kInt64);
    return Sample(std::move(rgb), std::move(depth), LabelMap(labels), id);
}

void write_sample(const fs::path& root, const Sample& s) {
    const auto h = static_cast<int>(s.shape().height);
    const auto w = static_cast<int>(s.shape().width);
    auto rgb8 = (s.rgb.data() * 255.0).round().clamp(0, 255).to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat rgb(h, w, CV_8UC3, rgb8.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    write_png(root / "rgb" / (s.id + ".png"), bgr);

    auto d16 = s.depth.data().round().clamp(0, 65535).to(torch::kInt32).contiguous();
    cv::Mat depth(h, w, CV_16UC1);
    const auto* dp = d16.data_ptr<std::int32_t>();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) depth.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(dp[y * w + x]);
    }
    write_png(root / "depth" / (s.id + ".png"), depth);

    auto l8 = s.label.data().to(torch::kUInt8).contiguous();
    cv::Mat label(h, w, CV_8UC1, l8.data_ptr());
    write_png(root / "labels" / (s.id + ".png"), label);
}

// --- splits ---------------------------------------------------------------------

SplitIds split(std::vector<std::string> ids, std::uint64_t seed, std::array<double, 3> ratios) {
    if (ids.empty()) throw std::invalid_argument("split: empty id list");
    for (double r : ratios) {
        if (!(r >= 0.0)) throw std::invalid_argument("split: ratios must be non-negative");
    }
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw std::invalid_argument("split: ratios must sum to 1");
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = static_cast<std::int64_t>(ids.size());
    const auto n_train = std::min<std::int64_t>(n, std::llround(static_cast<double>(n) * ratios[0]));
    const auto n_val = std::min<std::int64_t>(n - n_train, std::llround(static_cast<double>(n) * ratios[1]));
    SplitIds out;
    out.train.assign(ids.begin(), ids.begin() + n_train);
    out.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    out.test.assign(ids.begin() + n_train + n_val, ids.end());
    return out;
}

void write_manifest(const fs::path& root, const SplitIds& ids) {
    fs::create_directories(root);
    nlohmann::json j = {{"train", ids.train}, {"val", ids.val}, {"test", ids.test}};
    std::ofstream out(root / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + root.string());
    out << j.dump(2) << "\n";
}

SplitIds read_manifest(const fs::path& root) {
    const auto file = root / "manifest.json";
    std::ifstream in(file);
    if (!in) throw std::runtime_error("missing file: " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("cannot parse " + file.string() + ": " + e.what());
    }
    SplitIds ids;
    ids.train = j.value("train", std::vector<std::string>{});
    ids.val = j.value("val", std::vector<std::string>{});
    ids.test = j.value("test", std::vector<std::string>{});
    return ids;
}

const std::vector<std::string>& split_ids(const SplitIds& ids, const std::string& name) {
    if (name == "train") return ids.train;
    if (name == "val") return ids.val;
    if (name == "test") return ids.test;
    throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

SplitIds write_synthetic_corpus(const fs::path& root, const SynthParams& params, int count, std::uint64_t split_seed,
                                std::array<double, 3> ratios) {
    if (count <= 0) throw std::invalid_argument("synth: count must be positive");
    params.validate();
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
        SynthParams p = params;
        p.seed = sample_seed(params.seed, static_cast<std::uint64_t>(i));
        auto s = synth_scene(p);
        char name[32];
        std::snprintf(name, sizeof name, "synth_%04d", i);
        s.id = name;
        write_sample(root, s);
        ids.push_back(s.id);
    }
    auto splits = split(ids, split_seed, ratios);
    write_manifest(root, splits);
    return splits;
}

std::vector<Sample> load_split(const fs::path& root, const std::string& split_name) {
    const auto manifest = read_manifest(root);
    std::vector<Sample> out;
    for (const auto& id : split_ids(manifest, split_name)) out.push_back(load_sample(root, id));
    return out;
}

// --- transforms -----------------------------------------------------------------

Sample hflip(const Sample& s) {
    return Sample(RGBImage(s.rgb.data().flip({2})), DepthImage(s.depth.data().flip({2})),
                  LabelMap(s.label.data().flip({1})), s.id);
}

Sample resize_sample(const Sample& s, Shape2d out) {
    if (s.shape() == out) return s;
    namespace F = torch::nn::functional;
    const std::vector<std::int64_t> size{out.height, out.width};
    auto rgb = F::interpolate(s.rgb.data().unsqueeze(0),
                              F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false))
                   .squeeze(0)
                   .clamp(0.0, 1.0);
    // Nearest keeps depth validity and labels exact.
    auto nearest = [&](const torch::Tensor& t) {
        return F::interpolate(t.unsqueeze(0).to(torch::kFloat32), F::InterpolateFuncOptions().size(size).mode(torch::kNearest))
            .squeeze(0);
    };
    auto depth = nearest(s.depth.data());
    auto label = nearest(s.label.data().unsqueeze(0)).squeeze(0).to(torch::kInt64);
    return Sample(RGBImage(rgb), DepthImage(depth), LabelMap(label), s.id);
}

double depth_quantile(std::span<const Sample> samples, double q) {
    // Subsample with a fixed stride so large corpora stay bounded in memory.
    constexpr std::int64_t kMaxValues = 1 << 24;
    std::int64_t total = 0;
    for (const auto& s : samples) total += s.depth.data().numel();
    const auto stride = std::max<std::int64_t>(1, (total + kMaxValues - 1) / kMaxValues);
    std::vector<float> valid;
    for (const auto& s : samples) {
        auto d = s.depth.data().reshape({-1}).slice(0, 0, std::nullopt, stride).contiguous();
        const auto* ptr = d.data_ptr<float>();
        for (std::int64_t i = 0; i < d.numel(); ++i) {
            if (ptr[i] > 0.0F) valid.push_back(ptr[i]);
        }
    }
    if (valid.empty()) return 1.0;
    const auto rank = std::max(1.0, std::ceil(q * static_cast<double>(valid.size())));
    const auto k = static_cast<std::size_t>(rank) - 1;
    const auto nth = valid.begin() + static_cast<std::ptrdiff_t>(std::min(k, valid.size() - 1));
    std::nth_element(valid.begin(), nth, valid.end());
    return *nth;
}

Batch collate(std::span<const Sample> samples) {
    if (samples.empty()) throw std::invalid_argument("collate: empty batch");
    std::vector<torch::Tensor> rgb, depth, labels;
    Batch b;
    for (const auto& s : samples) {
        rgb.push_back(s.rgb.data());
        depth.push_back(s.depth.data());
        labels.push_back(s.label.data());
        b.ids.push_back(s.id);
    }
    b.rgb = torch::stack(rgb);
    b.depth = torch::stack(depth);
    b.labels = torch::stack(labels);
    return b;
}

}  // namespace amfnet
