#include "amfnet/maskgen.hpp"

namespace amfnet {

torch::Tensor generate_mask(const torch::Tensor& depth) {
    require_finite(depth, "generate_mask");
    if (depth.numel() > 0 && (depth < 0).any().item<bool>()) {
        throw std::invalid_argument("generate_mask: negative depth reading violates the sensor contract");
    }
    const auto dtype = depth.is_floating_point() ? depth.scalar_type() : torch::kFloat32;
    return (depth > 0).to(dtype);
}

Mask generate_mask(const DepthImage& depth) { return Mask(generate_mask(depth.data())); }

std::array<Shape2d, kNumStages> stage_shapes(Shape2d input) {
    if (input.height <= 0 || input.width <= 0 || input.height % 32 != 0 || input.width % 32 != 0) {
        throw std::invalid_argument("input resolution " + to_string(input) + " is not a positive multiple of 32");
    }
    std::array<Shape2d, kNumStages> out{};
    for (int n = 0; n < kNumStages; ++n) {
        const std::int64_t stride = std::int64_t{2} << n;
        out[n] = {input.height / stride, input.width / stride};
    }
    return out;
}

std::int64_t nearest_source_index(std::int64_t target, std::int64_t src_len, std::int64_t dst_len) {
    return (target * src_len) / dst_len;
}

namespace {

torch::Tensor index_table(std::int64_t src_len, std::int64_t dst_len, const torch::Device& device) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(dst_len));
    for (std::int64_t i = 0; i < dst_len; ++i) idx[static_cast<std::size_t>(i)] = nearest_source_index(i, src_len, dst_len);
    return torch::tensor(idx, torch::TensorOptions().dtype(torch::kInt64)).to(device);
}

}  // namespace

torch::Tensor nearest_downsample(const torch::Tensor& grid, Shape2d out) {
    if (grid.dim() < 2) throw std::invalid_argument("nearest_downsample: need at least 2 dims");
    const auto h = grid.size(-2);
    const auto w = grid.size(-1);
    if (out.height <= 0 || out.width <= 0 || out.height > h || out.width > w) {
        throw std::invalid_argument("nearest_downsample: target " + to_string(out) + " larger than source " +
                                    to_string({h, w}) + " (downsampling only)");
    }
    return grid.index_select(-2, index_table(h, out.height, grid.device()))
        .index_select(-1, index_table(w, out.width, grid.device()));
}

MaskPyramid build_pyramid(const torch::Tensor& mask, const std::array<Shape2d, kNumStages>& shapes) {
    require_binary(mask, "build_pyramid");
    for (int n = 1; n < kNumStages; ++n) {
        if (shapes[n].height >= shapes[n - 1].height || shapes[n].width >= shapes[n - 1].width) {
            throw std::invalid_argument("build_pyramid: stage shapes must strictly decrease in both dimensions");
        }
    }
    MaskPyramid pyramid;
    for (int n = 0; n < kNumStages; ++n) pyramid.levels[n] = nearest_downsample(mask, shapes[n]);
    return pyramid;
}

}  // namespace amfnet
