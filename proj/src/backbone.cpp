#include "amfnet/backbone.hpp"

#include "amfnet/layers.hpp"
#include "amfnet/maskgen.hpp"

#include <cmath>
#include <sstream>

namespace amfnet {

namespace nn = torch::nn;

EncoderConfig EncoderConfig::desk(std::int64_t in_channels) {
    EncoderConfig c;
    c.in_channels = in_channels;
    return c;
}

EncoderConfig EncoderConfig::full(std::int64_t in_channels) {
    EncoderConfig c;
    c.in_channels = in_channels;
    c.width_multiplier = 1.0;
    c.group_depths = {3, 4, 6, 3};
    return c;
}

std::array<std::int64_t, kNumStages> EncoderConfig::channels() const {
    std::array<std::int64_t, kNumStages> out{};
    for (int i = 0; i < kNumStages; ++i) {
        out[i] = std::llround(static_cast<double>(stage_channels[i]) * width_multiplier);
    }
    return out;
}

void EncoderConfig::validate() const {
    if (in_channels <= 0) throw std::invalid_argument("EncoderConfig: in_channels must be positive");
    if (!(width_multiplier > 0.0)) throw std::invalid_argument("EncoderConfig: width_multiplier must be positive");
    const auto ch = channels();
    for (int i = 0; i < kNumStages; ++i) {
        if (stage_channels[i] <= 0) throw std::invalid_argument("EncoderConfig: stage_channels must be positive");
        if (ch[i] < 8) {
            throw std::invalid_argument("EncoderConfig: stage " + std::to_string(i + 1) + " scales to " +
                                        std::to_string(ch[i]) + " channels (< 8)");
        }
        if (i > 0 && ch[i] % 4 != 0) {
            throw std::invalid_argument("EncoderConfig: bottleneck stage " + std::to_string(i + 1) +
                                        " needs a channel count divisible by 4");
        }
    }
    for (int d : group_depths) {
        if (d < 1) throw std::invalid_argument("EncoderConfig: group depths must be >= 1");
    }
    if (mhsa_heads <= 0) throw std::invalid_argument("EncoderConfig: mhsa_heads must be positive");
    if (use_mhsa_stage5 && (ch[4] / 4) % mhsa_heads != 0) {
        throw std::invalid_argument("EncoderConfig: stage-5 bottleneck width not divisible by mhsa_heads");
    }
    stage_shapes(max_input);  // throws unless divisible by 32
}

// --- multi-head self-attention ------------------------------------------------

MultiHeadSelfAttentionImpl::MultiHeadSelfAttentionImpl(std::int64_t channels, std::int64_t heads, Shape2d max_extent)
    : channels_(channels), heads_(heads), max_extent_(max_extent) {
    if (heads <= 0 || channels <= 0 || channels % heads != 0) {
        throw std::invalid_argument("mhsa: channels (" + std::to_string(channels) + ") not divisible by heads (" +
                                    std::to_string(heads) + ")");
    }
    if (max_extent.height <= 0 || max_extent.width <= 0) throw std::invalid_argument("mhsa: empty max extent");
    const auto head_dim = channels / heads;
    auto proj = [&] { return nn::Conv2d(nn::Conv2dOptions(channels, channels, 1).bias(false)); };
    query_ = register_module("query", proj());
    key_ = register_module("key", proj());
    value_ = register_module("value", proj());
    const double std = 1.0 / std::sqrt(static_cast<double>(head_dim));
    rel_height_ = register_parameter("rel_height", torch::randn({2 * max_extent.height - 1, head_dim}) * std);
    rel_width_ = register_parameter("rel_width", torch::randn({2 * max_extent.width - 1, head_dim}) * std);
}

namespace {

// idx[p][q] = coord(q) - coord(p) + (extent - 1), for flattened positions p,q.
torch::Tensor relative_index(std::int64_t h, std::int64_t w, std::int64_t extent, bool rows) {
    auto ys = torch::arange(h, torch::kInt64).view({h, 1}).expand({h, w}).reshape({-1});
    auto xs = torch::arange(w, torch::kInt64).view({1, w}).expand({h, w}).reshape({-1});
    const auto& c = rows ? ys : xs;
    return c.view({1, -1}) - c.view({-1, 1}) + (extent - 1);
}

}  // namespace

std::pair<torch::Tensor, torch::Tensor> MultiHeadSelfAttentionImpl::forward_with_attention(const torch::Tensor& x) {
    TORCH_CHECK(x.dim() == 4 && x.size(1) == channels_, "mhsa: expected (N,", channels_, ",H,W) input, got ",
                x.sizes());
    const auto n = x.size(0);
    const auto h = x.size(2);
    const auto w = x.size(3);
    if (h > max_extent_.height || w > max_extent_.width) {
        throw std::invalid_argument("mhsa: input extent " + to_string({h, w}) + " exceeds relative table extent " +
                                    to_string(max_extent_));
    }
    const auto head_dim = channels_ / heads_;
    const auto hw = h * w;
    auto q = query_->forward(x).view({n, heads_, head_dim, hw}) * (1.0 / std::sqrt(static_cast<double>(head_dim)));
    auto k = key_->forward(x).view({n, heads_, head_dim, hw});
    auto v = value_->forward(x).view({n, heads_, head_dim, hw});

    auto qt = q.transpose(-2, -1);  // (N, heads, HW, d)
    auto logits = qt.matmul(k);     // content-content
    auto expand = [&](const torch::Tensor& idx) {
        return idx.to(x.device()).view({1, 1, hw, hw}).expand({n, heads_, hw, hw});
    };
    logits = logits + qt.matmul(rel_height_.t()).gather(-1, expand(relative_index(h, w, max_extent_.height, true)));
    logits = logits + qt.matmul(rel_width_.t()).gather(-1, expand(relative_index(h, w, max_extent_.width, false)));
    auto attention = torch::softmax(logits, -1);
    auto out = v.matmul(attention.transpose(-2, -1)).reshape({n, channels_, h, w});
    return {out, attention};
}

torch::Tensor MultiHeadSelfAttentionImpl::forward(const torch::Tensor& x) { return forward_with_attention(x).first; }

// --- bottlenecks --------------------------------------------------------------

namespace {

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1) {
    return he_conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).bias(false));
}

nn::Sequential projection(std::int64_t in, std::int64_t out, std::int64_t stride) {
    if (in == out && stride == 1) return nullptr;
    return nn::Sequential(conv(in, out, 1, stride), nn::BatchNorm2d(out));
}

}  // namespace

BottleneckImpl::BottleneckImpl(std::int64_t in, std::int64_t out, std::int64_t stride) {
    const auto mid = out / 4;
    conv1_ = register_module("conv1", conv(in, mid, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(mid));
    conv2_ = register_module("conv2", conv(mid, mid, 3, stride));
    bn2_ = register_module("bn2", nn::BatchNorm2d(mid));
    conv3_ = register_module("conv3", conv(mid, out, 1));
    bn3_ = register_module("bn3", nn::BatchNorm2d(out));
    shortcut_ = projection(in, out, stride);
    if (shortcut_) register_module("shortcut", shortcut_);
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1_(conv1_(x)));
    y = torch::relu(bn2_(conv2_(y)));
    y = bn3_(conv3_(y));
    return torch::relu(y + (shortcut_ ? shortcut_->forward(x) : x));
}

BotBlockImpl::BotBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t heads,
                           Shape2d max_extent) {
    const auto mid = out / 4;
    conv1_ = register_module("conv1", conv(in, mid, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(mid));
    mhsa_ = register_module("mhsa", MultiHeadSelfAttention(mid, heads, max_extent));
    if (stride == 2) pool_ = register_module("pool", nn::AvgPool2d(nn::AvgPool2dOptions(2).stride(2)));
    bn2_ = register_module("bn2", nn::BatchNorm2d(mid));
    conv3_ = register_module("conv3", conv(mid, out, 1));
    bn3_ = register_module("bn3", nn::BatchNorm2d(out));
    shortcut_ = projection(in, out, stride);
    if (shortcut_) register_module("shortcut", shortcut_);
}

torch::Tensor BotBlockImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1_(conv1_(x)));
    y = mhsa_(y);
    if (pool_) y = pool_(y);
    y = torch::relu(bn2_(y));
    y = bn3_(conv3_(y));
    return torch::relu(y + (shortcut_ ? shortcut_->forward(x) : x));
}

// --- encoder ------------------------------------------------------------------

EncoderImpl::EncoderImpl(EncoderConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto ch = config_.channels();
    const auto shapes = stage_shapes(config_.max_input);

    stages_[0] = nn::Sequential(conv(config_.in_channels, ch[0], 7, 2), nn::BatchNorm2d(ch[0]), nn::ReLU());

    auto group = [&](nn::Sequential seq, int stage, std::int64_t stride) {
        std::int64_t in = ch[stage - 1];
        for (int b = 0; b < config_.group_depths[stage - 1]; ++b) {
            const auto s = b == 0 ? stride : 1;
            if (stage == 4 && config_.use_mhsa_stage5) {
                // Attention in the strided block runs at the stage-4 resolution.
                seq->push_back(BotBlock(in, ch[stage], s, config_.mhsa_heads, shapes[3]));
            } else {
                seq->push_back(Bottleneck(in, ch[stage], s));
            }
            in = ch[stage];
        }
        return seq;
    };
    stages_[1] = group(nn::Sequential(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1))), 1, 1);
    stages_[2] = group(nn::Sequential(), 2, 2);
    stages_[3] = group(nn::Sequential(), 3, 2);
    stages_[4] = group(nn::Sequential(), 4, 2);

    for (int i = 0; i < kNumStages; ++i) register_module("stage" + std::to_string(i + 1), stages_[i]);
}

torch::Tensor EncoderImpl::forward_stage(StageIndex n, const torch::Tensor& x) {
    return stages_[n.offset()]->forward(x);
}

EncoderOutputs EncoderImpl::forward(const torch::Tensor& input, const StageInjector& inject) {
    if (input.dim() != 4 || input.size(1) != config_.in_channels) {
        std::ostringstream msg;
        msg << "encoder: expected (N," << config_.in_channels << ",H,W) input, got " << input.sizes();
        throw std::invalid_argument(msg.str());
    }
    const Shape2d in_shape{input.size(2), input.size(3)};
    stage_shapes(in_shape);
    if (in_shape.height > config_.max_input.height || in_shape.width > config_.max_input.width) {
        throw std::invalid_argument("encoder: input " + to_string(in_shape) + " exceeds configured maximum " +
                                    to_string(config_.max_input));
    }
    EncoderOutputs out;
    torch::Tensor x = input;
    for (int i = 0; i < kNumStages; ++i) {
        const StageIndex n(i + 1);
        out.stages[i] = forward_stage(n, x);
        x = out.stages[i];
        if (inject) {
            auto injected = inject(n, out.stages[i]);
            if (!injected.defined() || injected.sizes() != out.stages[i].sizes()) {
                std::ostringstream msg;
                msg << "encoder: injected map for stage " << n.value() << " has shape "
                    << (injected.defined() ? injected.sizes() : c10::IntArrayRef{}) << ", stage output is "
                    << out.stages[i].sizes();
                throw std::invalid_argument(msg.str());
            }
            x = injected;
        }
    }
    return out;
}

EncoderOutputs EncoderImpl::forward(const torch::Tensor& input,
                                    const std::array<std::optional<torch::Tensor>, kNumStages>& injected) {
    return forward(input, [&](StageIndex n, const torch::Tensor& raw) {
        const auto& sub = injected[n.offset()];
        return sub ? *sub : raw;
    });
}

}  // namespace amfnet
