#include "amfnet/decoder.hpp"

#include <sstream>

namespace amfnet {

namespace nn = torch::nn;

namespace {

void require_channels(const torch::Tensor& x, std::int64_t channels, const char* op) {
    if (x.dim() != 4 || x.size(1) != channels) {
        std::ostringstream msg;
        msg << op << ": expected (N," << channels << ",H,W) input, got " << x.sizes();
        throw std::invalid_argument(msg.str());
    }
}

}  // namespace

CBRImpl::CBRImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride) : in_(in) {
    if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0 || kernel % 2 == 0) {
        throw std::invalid_argument("cbr: invalid geometry (channels/stride positive, kernel odd)");
    }
    conv_ = register_module(
        "conv", he_conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)));
    bn_ = register_module("bn", nn::BatchNorm2d(out));
}

torch::Tensor CBRImpl::forward(const torch::Tensor& x) {
    require_channels(x, in_, "cbr");
    return torch::relu(bn_(conv_(x)));
}

TransposedCBRImpl::TransposedCBRImpl(std::int64_t in, std::int64_t out) : in_(in) {
    deconv_ = register_module("deconv", he_conv_transpose2d(nn::ConvTranspose2dOptions(in, out, 2).stride(2).bias(false)));
    bn_ = register_module("bn", nn::BatchNorm2d(out));
}

torch::Tensor TransposedCBRImpl::forward(const torch::Tensor& x) {
    require_channels(x, in_, "transposed_cbr");
    return torch::relu(bn_(deconv_(x)));
}

DualResidualBlockImpl::DualResidualBlockImpl(std::int64_t channels) : channels_(channels) {
    cbr1 = register_module("cbr1", CBR(channels, channels, 3));
    cbr2 = register_module("cbr2", CBR(channels, channels, 3));
    cbr3 = register_module("cbr3", CBR(channels, channels, 3));
    cbr4 = register_module("cbr4", CBR(channels, channels, 1));
}

torch::Tensor DualResidualBlockImpl::forward(const torch::Tensor& x) {
    require_channels(x, channels_, "dual_residual_block");
    auto a = cbr1(x);
    auto b = a + cbr2(a);
    return cbr3(b) + cbr4(x);
}

DecoderStageImpl::DecoderStageImpl(std::int64_t in, std::int64_t out, std::int64_t reduction_ratio) {
    block = register_module("block", DualResidualBlock(in));
    attention = register_module("channel_attention", ChannelAttention(in, effective_reduction(in, reduction_ratio)));
    upsample = register_module("upsample", TransposedCBR(in, out));
}

torch::Tensor DecoderStageImpl::forward(const torch::Tensor& x) { return upsample(attention(block(x))); }

DecoderImpl::DecoderImpl(const std::array<std::int64_t, kNumStages>& c, std::int64_t reduction_ratio)
    : out_channels_(c[0]) {
    for (int k = 1; k <= kNumStages; ++k) {
        const auto in = c[static_cast<std::size_t>(kNumStages - k)];
        const auto out = k < kNumStages ? c[static_cast<std::size_t>(kNumStages - k - 1)] : c[0];
        stages_[static_cast<std::size_t>(k - 1)] =
            register_module("stage" + std::to_string(k), DecoderStage(in, out, reduction_ratio));
    }
}

torch::Tensor DecoderImpl::forward(const std::array<torch::Tensor, kNumStages>& fused) {
    auto x = fused[kNumStages - 1];
    for (int k = 1; k <= kNumStages; ++k) {
        x = stages_[static_cast<std::size_t>(k - 1)](x);
        if (k < kNumStages) {
            const auto& skip = fused[static_cast<std::size_t>(kNumStages - 1 - k)];
            if (skip.sizes() != x.sizes()) {
                std::ostringstream msg;
                msg << "decoder: stage " << k << " output " << x.sizes() << " does not match skip " << skip.sizes();
                throw std::invalid_argument(msg.str());
            }
            x = x + skip;
        }
    }
    return x;
}

}  // namespace amfnet
