#pragma once

// Five-stage BotNet-50 style encoder.
//
//   stage 1: 7x7/2 conv + BN + ReLU                      stride 2
//   stage 2: 3x3/2 max-pool + bottleneck group           stride 4
//   stage 3: bottleneck group, first block strided       stride 8
//   stage 4: bottleneck group, first block strided       stride 16
//   stage 5: bottleneck group with the 3x3 conv replaced by multi-head
//            self-attention over 2D relative positions   stride 32
//
// RGB and depth encoders are separate instances with independent parameters.

#include "amfnet/core.hpp"

#include <functional>
#include <optional>

namespace amfnet {

struct EncoderConfig {
    std::int64_t in_channels = 3;
    std::array<std::int64_t, kNumStages> stage_channels{64, 256, 512, 1024, 2048};
    double width_multiplier = 0.125;
    /// Bottleneck blocks in stages 2..5.
    std::array<int, 4> group_depths{1, 1, 1, 1};
    bool use_mhsa_stage5 = true;
    std::int64_t mhsa_heads = 4;
    /// Largest accepted input. Sizes the stage-5 relative position tables.
    Shape2d max_input{288, 512};

    /// Desk-scale profile: 1/8 width, one block per group.
    static EncoderConfig desk(std::int64_t in_channels);
    /// BotNet-50 widths and depths (3,4,6,3).
    static EncoderConfig full(std::int64_t in_channels);

    /// stage_channels scaled by width_multiplier and rounded.
    std::array<std::int64_t, kNumStages> channels() const;
    void validate() const;
};

struct EncoderOutputs {
    std::array<torch::Tensor, kNumStages> stages;

    const torch::Tensor& stage(StageIndex n) const { return stages[n.offset()]; }
};

/// Called with each raw stage output; the returned map is what the next stage
/// consumes. Must keep the shape of `raw`.
using StageInjector = std::function<torch::Tensor(StageIndex, const torch::Tensor& raw)>;

/// Multi-head self-attention over all positions of a feature map, with
/// content-content and content-position logits (relative height + width
/// embeddings). Output shape equals input shape.
class MultiHeadSelfAttentionImpl : public torch::nn::Module {
public:
    MultiHeadSelfAttentionImpl(std::int64_t channels, std::int64_t heads, Shape2d max_extent);

    torch::Tensor forward(const torch::Tensor& x);
    /// Also returns the attention weights, shape (N, heads, HW, HW).
    std::pair<torch::Tensor, torch::Tensor> forward_with_attention(const torch::Tensor& x);

    std::int64_t heads() const { return heads_; }

private:
    std::int64_t channels_;
    std::int64_t heads_;
    Shape2d max_extent_;
    torch::nn::Conv2d query_{nullptr}, key_{nullptr}, value_{nullptr};
    torch::Tensor rel_height_, rel_width_;
};
TORCH_MODULE(MultiHeadSelfAttention);

class BottleneckImpl : public torch::nn::Module {
public:
    BottleneckImpl(std::int64_t in, std::int64_t out, std::int64_t stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
    torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
    torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Bottleneck with attention in place of the 3x3 conv; stride 2 is a 2x2
/// average pool after attention.
class BotBlockImpl : public torch::nn::Module {
public:
    BotBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t heads, Shape2d max_extent);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv3_{nullptr};
    torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
    MultiHeadSelfAttention mhsa_{nullptr};
    torch::nn::AvgPool2d pool_{nullptr};
    torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BotBlock);

class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(EncoderConfig config);

    EncoderOutputs forward(const torch::Tensor& input, const StageInjector& inject = {});
    /// Static substitution: stage n+1 consumes injected[n] when present.
    EncoderOutputs forward(const torch::Tensor& input,
                           const std::array<std::optional<torch::Tensor>, kNumStages>& injected);

    /// Runs a single stage on its input.
    torch::Tensor forward_stage(StageIndex n, const torch::Tensor& x);

    const EncoderConfig& config() const { return config_; }

private:
    EncoderConfig config_;
    std::array<torch::nn::Sequential, kNumStages> stages_;
};
TORCH_MODULE(Encoder);

}  // namespace amfnet
