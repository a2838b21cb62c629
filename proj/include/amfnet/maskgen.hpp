#pragma once

// Depth-validity masks and their per-stage nearest-neighbour pyramid.

#include "amfnet/core.hpp"

#include <array>
#include <vector>

namespace amfnet {

/// Five masks M1..M5, one per encoder stage resolution.
struct MaskPyramid {
    std::array<torch::Tensor, kNumStages> levels;

    const torch::Tensor& level(StageIndex n) const { return levels[n.offset()]; }
};

/// mask = 1 where depth > 0, else 0. Works on any layout; shape is preserved.
/// Throws on negative or non-finite readings.
torch::Tensor generate_mask(const torch::Tensor& depth);
Mask generate_mask(const DepthImage& depth);

/// Output shapes of the five encoder stages (strides 2,4,8,16,32).
/// Throws unless both input dims are positive multiples of 32.
std::array<Shape2d, kNumStages> stage_shapes(Shape2d input);

/// Source index picked for `target` when resampling `src_len` -> `dst_len`:
/// floor(target * src_len / dst_len), computed exactly in integers.
std::int64_t nearest_source_index(std::int64_t target, std::int64_t src_len, std::int64_t dst_len);

/// Nearest-neighbour resample of the last two dims to `out`. Downsampling only.
torch::Tensor nearest_downsample(const torch::Tensor& grid, Shape2d out);

/// Builds M1..M5. `shapes` must be strictly decreasing in both dims and no
/// larger than the mask.
MaskPyramid build_pyramid(const torch::Tensor& mask, const std::array<Shape2d, kNumStages>& shapes);

}  // namespace amfnet
