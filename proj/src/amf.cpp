#include "amfnet/amf.hpp"

#include <sstream>

namespace amfnet {

namespace nn = torch::nn;

namespace {

void require_feature_pair(const torch::Tensor& rgb, const torch::Tensor& depth, const char* op) {
    if (rgb.dim() != 4) throw std::invalid_argument(std::string(op) + ": feature maps must be (N,C,H,W)");
    require_same_shape(rgb, depth, op);
}

torch::Tensor global_pool(const torch::Tensor& x) { return x.mean({2, 3}); }

}  // namespace

AdaptiveWeights weights_from_logits(const torch::Tensor& logits) {
    TORCH_CHECK(logits.dim() == 2 && logits.size(1) == 2, "expected (N,2) logits, got ", logits.sizes());
    auto w = torch::softmax(logits, 1);
    return {w.select(1, 0), w.select(1, 1)};
}

AdaptiveMaskPair make_adaptive_masks(const AdaptiveWeights& weights, const torch::Tensor& mask) {
    const auto& wd = weights.w_depth;
    if (!wd.defined() || wd.dim() != 1) throw std::invalid_argument("make_adaptive_masks: w_depth must be (N)");
    require_finite(wd, "make_adaptive_masks");
    if (wd.numel() > 0 && (wd.min().item<double>() < 0.0 || wd.max().item<double>() > 1.0)) {
        throw std::invalid_argument("make_adaptive_masks: weights must lie in [0,1]");
    }
    if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != wd.size(0)) {
        std::ostringstream msg;
        msg << "make_adaptive_masks: mask must be (N,1,H,W) with N=" << wd.size(0) << ", got " << mask.sizes();
        throw std::invalid_argument(msg.str());
    }
    require_binary(mask, "make_adaptive_masks");
    auto m_depth = wd.view({-1, 1, 1, 1}) * mask.to(wd.scalar_type());
    auto m_rgb = 1.0 - m_depth;
    return {m_rgb, m_depth};
}

torch::Tensor masked_fuse(const torch::Tensor& rgb, const torch::Tensor& depth, const AdaptiveMaskPair& masks) {
    require_feature_pair(rgb, depth, "masked_fuse");
    require_same_shape(masks.m_rgb, masks.m_depth, "masked_fuse masks");
    const auto& m = masks.m_rgb;
    if (m.dim() != 4 || m.size(0) != rgb.size(0) || m.size(1) != 1 || m.size(2) != rgb.size(2) ||
        m.size(3) != rgb.size(3)) {
        std::ostringstream msg;
        msg << "masked_fuse: masks " << m.sizes() << " do not broadcast over features " << rgb.sizes();
        throw std::invalid_argument(msg.str());
    }
    return rgb * masks.m_rgb + depth * masks.m_depth;
}

std::int64_t effective_reduction(std::int64_t channels, std::int64_t ratio) {
    return std::max<std::int64_t>(1, std::min(ratio, channels));
}

// --- mask generator -------------------------------------------------------------

AdaptiveMaskGeneratorImpl::AdaptiveMaskGeneratorImpl(std::int64_t channels) {
    if (channels <= 0) throw std::invalid_argument("AdaptiveMaskGenerator: channels must be positive");
    const auto in = 2 * channels;
    const auto h1 = std::max<std::int64_t>(1, in / 4);
    const auto h2 = std::max<std::int64_t>(1, h1 / 4);
    fc1_ = register_module("fc1", nn::Linear(in, h1));
    bn1_ = register_module("bn1", RunningBatchNorm1d(h1));
    fc2_ = register_module("fc2", nn::Linear(h1, h2));
    bn2_ = register_module("bn2", RunningBatchNorm1d(h2));
    fc3_ = register_module("fc3", nn::Linear(h2, 2));
    bn3_ = register_module("bn3", RunningBatchNorm1d(2));
}

torch::Tensor AdaptiveMaskGeneratorImpl::logits(const torch::Tensor& rgb, const torch::Tensor& depth) {
    require_feature_pair(rgb, depth, "amg_weights");
    auto v = global_pool(torch::cat({rgb, depth}, 1));
    v = torch::relu(bn1_(fc1_(v)));
    v = torch::relu(bn2_(fc2_(v)));
    return bn3_(fc3_(v));
}

AdaptiveWeights AdaptiveMaskGeneratorImpl::forward(const torch::Tensor& rgb, const torch::Tensor& depth) {
    return weights_from_logits(logits(rgb, depth));
}

// --- attention ------------------------------------------------------------------

ChannelAttentionImpl::ChannelAttentionImpl(std::int64_t channels, std::int64_t reduction) : channels_(channels) {
    if (reduction <= 0 || channels < reduction) {
        throw std::invalid_argument("channel_attention: channels (" + std::to_string(channels) +
                                    ") must be >= reduction (" + std::to_string(reduction) + ")");
    }
    const auto hidden = channels / reduction;
    fc1_ = register_module("fc1", nn::Linear(channels, hidden));
    bn_ = register_module("bn", RunningBatchNorm1d(hidden));
    fc2_ = register_module("fc2", nn::Linear(hidden, channels));
}

torch::Tensor ChannelAttentionImpl::weights(const torch::Tensor& x) {
    TORCH_CHECK(x.dim() == 4 && x.size(1) == channels_, "channel_attention: expected (N,", channels_,
                ",H,W), got ", x.sizes());
    return torch::sigmoid(fc2_(torch::relu(bn_(fc1_(global_pool(x))))));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) {
    return x * weights(x).view({x.size(0), channels_, 1, 1});
}

SpatialAttentionImpl::SpatialAttentionImpl(std::int64_t channels, std::int64_t kernel) {
    if (kernel <= 0 || kernel % 2 == 0) {
        throw std::invalid_argument("spatial_attention: kernel must be odd and positive, got " + std::to_string(kernel));
    }
    conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(channels, 1, kernel).padding(kernel / 2)));
}

torch::Tensor SpatialAttentionImpl::weights(const torch::Tensor& x) { return torch::sigmoid(conv_(x)); }

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& x) { return x * weights(x); }

// --- fusion module --------------------------------------------------------------

AMFImpl::AMFImpl(std::int64_t channels, AMFOptions options) {
    amg_ = register_module("amg", AdaptiveMaskGenerator(channels));
    channel_ = register_module("channel_attention",
                               ChannelAttention(channels, effective_reduction(channels, options.reduction_ratio)));
    spatial_ = register_module("spatial_attention", SpatialAttention(channels, options.spatial_kernel));
}

AMFTrace AMFImpl::forward_traced(const torch::Tensor& rgb, const torch::Tensor& depth, const torch::Tensor& mask) {
    AMFTrace t;
    t.weights = amg_(rgb, depth);
    t.masks = make_adaptive_masks(t.weights, mask);
    t.fused = masked_fuse(rgb, depth, t.masks);
    t.channel_refined = channel_(t.fused);
    t.output = spatial_(t.channel_refined);
    return t;
}

torch::Tensor AMFImpl::forward(const torch::Tensor& rgb, const torch::Tensor& depth, const torch::Tensor& mask) {
    return forward_traced(rgb, depth, mask).output;
}

}  // namespace amfnet
