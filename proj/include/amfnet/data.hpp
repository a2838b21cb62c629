#pragma once

// DRNO-layout datasets and the synthetic RGB-D road scene generator.
//
// On-disk layout under a dataset root:
//   rgb/<id>.png     8-bit, 3 channels
//   depth/<id>.png   16-bit, 1 channel, millimetres, 0 = no measurement
//   labels/<id>.png  8-bit, 1 channel, class index {0,1,2}
//   manifest.json    {"train": [...], "val": [...], "test": [...]}

#include "amfnet/core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace amfnet {

struct Sample {
    RGBImage rgb;
    DepthImage depth;
    LabelMap label;
    std::string id;

    /// Throws unless the three grids share height and width.
    Sample(RGBImage rgb, DepthImage depth, LabelMap label, std::string id);

    Shape2d shape() const { return label.shape(); }
};

struct SynthParams {
    Shape2d resolution{96, 128};
    double invalid_fraction = 0.4;
    double road_fraction = 0.35;
    int obstacle_count = 3;
    double noise_level = 0.04;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Number of zero-depth pixels synth_scene places: ceil(fraction * pixels),
/// with products that are integral up to rounding error taken as exact.
std::int64_t invalid_pixel_count(double fraction, Shape2d resolution);

/// Pure function of `params`. Road band, obstacle depressions labelled as
/// negative obstacles, shadow distractors in RGB, plane-geometry depth and
/// exactly invalid_pixel_count() zero-depth pixels grouped in contiguous blobs.
Sample synth_scene(const SynthParams& params);

/// Reads the triple for `id`. Throws std::runtime_error naming the file on a
/// missing/undecodable file, shape mismatch or label index > 2.
Sample load_sample(const std::filesystem::path& root, const std::string& id);
/// Single-file readers: 8-bit 3-channel PNG, 16-bit 1-channel PNG.
RGBImage load_rgb(const std::filesystem::path& file);
DepthImage load_depth(const std::filesystem::path& file);
void write_sample(const std::filesystem::path& root, const Sample& sample);

struct SplitIds {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/// Seeded shuffle, then sizes round(n*r_train), round(n*r_val), remainder.
SplitIds split(std::vector<std::string> ids, std::uint64_t seed, std::array<double, 3> ratios = {0.5, 0.25, 0.25});

void write_manifest(const std::filesystem::path& root, const SplitIds& ids);
SplitIds read_manifest(const std::filesystem::path& root);
const std::vector<std::string>& split_ids(const SplitIds& ids, const std::string& name);

/// Writes `count` synthetic samples (ids synth_0000, ...) and a manifest.
/// Sample i uses seed mix(params.seed, i).
SplitIds write_synthetic_corpus(const std::filesystem::path& root, const SynthParams& params, int count,
                                std::uint64_t split_seed, std::array<double, 3> ratios = {0.5, 0.25, 0.25});
std::uint64_t sample_seed(std::uint64_t corpus_seed, std::uint64_t index);

std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split_name);

/// Mirrors all three grids left-right.
Sample hflip(const Sample& s);
/// Resamples to `out`: bilinear RGB, nearest depth and labels.
Sample resize_sample(const Sample& s, Shape2d out);

/// q-quantile of the valid (non-zero) depth readings; 1.0 if none.
double depth_quantile(std::span<const Sample> samples, double q = 0.99);

struct Batch {
    torch::Tensor rgb;     // (N,3,H,W)
    torch::Tensor depth;   // (N,1,H,W) raw
    torch::Tensor labels;  // (N,H,W) int64
    std::vector<std::string> ids;
};

Batch collate(std::span<const Sample> samples);

}  // namespace amfnet
