#pragma once

// Adaptive-mask fusion of RGB and depth feature maps.
//
// The mask generator pools the concatenated features to one softmax weight
// pair per sample. The depth weight times the binary validity mask gives the
// depth mask; its complement gives the RGB mask. The masked sum is then
// refined by channel attention followed by spatial attention.

#include "amfnet/core.hpp"
#include "amfnet/layers.hpp"

namespace amfnet {

/// One (w_rgb, w_depth) pair per sample, each of shape (N).
struct AdaptiveWeights {
    torch::Tensor w_rgb;
    torch::Tensor w_depth;
};

/// Complementary masks of shape (N,1,H,W): m_rgb + m_depth = 1.
struct AdaptiveMaskPair {
    torch::Tensor m_rgb;
    torch::Tensor m_depth;
};

/// Softmax over the last dim of (N,2) logits; column 0 is RGB, column 1 depth.
AdaptiveWeights weights_from_logits(const torch::Tensor& logits);

/// m_depth = w_depth * mask, m_rgb = 1 - m_depth. `mask` is (N,1,H,W) binary.
AdaptiveMaskPair make_adaptive_masks(const AdaptiveWeights& weights, const torch::Tensor& mask);

/// rgb * m_rgb + depth * m_depth, masks broadcast across channels.
torch::Tensor masked_fuse(const torch::Tensor& rgb, const torch::Tensor& depth, const AdaptiveMaskPair& masks);

/// Reduction ratio actually used for `channels`: min(ratio, channels), so the
/// hidden width never drops below one unit.
std::int64_t effective_reduction(std::int64_t channels, std::int64_t ratio);

class AdaptiveMaskGeneratorImpl : public torch::nn::Module {
public:
    /// `channels` is the width of each input map (the concatenation has 2x).
    explicit AdaptiveMaskGeneratorImpl(std::int64_t channels);

    /// Pre-softmax logits (N,2) after the final FC-BN.
    torch::Tensor logits(const torch::Tensor& rgb, const torch::Tensor& depth);
    AdaptiveWeights forward(const torch::Tensor& rgb, const torch::Tensor& depth);

private:
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr}, fc3_{nullptr};
    RunningBatchNorm1d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
};
TORCH_MODULE(AdaptiveMaskGenerator);

/// Pool -> FC-BN-ReLU -> FC -> sigmoid, per-channel gate on the input.
class ChannelAttentionImpl : public torch::nn::Module {
public:
    ChannelAttentionImpl(std::int64_t channels, std::int64_t reduction);

    /// Per-channel gates (N,C) in (0,1).
    torch::Tensor weights(const torch::Tensor& x);
    torch::Tensor forward(const torch::Tensor& x);

private:
    std::int64_t channels_;
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
    RunningBatchNorm1d bn_{nullptr};
};
TORCH_MODULE(ChannelAttention);

/// KxK conv to one channel -> sigmoid, per-position gate on the input.
class SpatialAttentionImpl : public torch::nn::Module {
public:
    SpatialAttentionImpl(std::int64_t channels, std::int64_t kernel);

    /// Per-position gates (N,1,H,W) in (0,1).
    torch::Tensor weights(const torch::Tensor& x);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(SpatialAttention);

struct AMFOptions {
    std::int64_t reduction_ratio = 16;
    std::int64_t spatial_kernel = 7;
};

/// Intermediate values of one fusion call.
struct AMFTrace {
    AdaptiveWeights weights;
    AdaptiveMaskPair masks;
    torch::Tensor fused;  // before attention
    torch::Tensor channel_refined;
    torch::Tensor output;
};

class AMFImpl : public torch::nn::Module {
public:
    AMFImpl(std::int64_t channels, AMFOptions options = {});

    torch::Tensor forward(const torch::Tensor& rgb, const torch::Tensor& depth, const torch::Tensor& mask);
    AMFTrace forward_traced(const torch::Tensor& rgb, const torch::Tensor& depth, const torch::Tensor& mask);

    AdaptiveMaskGenerator& generator() { return amg_; }
    ChannelAttention& channel_attention() { return channel_; }
    SpatialAttention& spatial_attention() { return spatial_; }

private:
    AdaptiveMaskGenerator amg_{nullptr};
    ChannelAttention channel_{nullptr};
    SpatialAttention spatial_{nullptr};
};
TORCH_MODULE(AMF);

}  // namespace amfnet
