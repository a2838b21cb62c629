#pragma once

// Five-stage decoder. Each stage: dual residual block -> channel attention ->
// transposed CBR (kernel 2, stride 2) that doubles both spatial dims.

#include "amfnet/amf.hpp"

namespace amfnet {

/// Conv -> BN -> ReLU, same padding.
class CBRImpl : public torch::nn::Module {
public:
    CBRImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride = 1);
    torch::Tensor forward(const torch::Tensor& x);

private:
    std::int64_t in_;
    torch::nn::Conv2d conv_{nullptr};
    torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(CBR);

/// ConvTranspose(k=2, s=2) -> BN -> ReLU.
class TransposedCBRImpl : public torch::nn::Module {
public:
    TransposedCBRImpl(std::int64_t in, std::int64_t out);
    torch::Tensor forward(const torch::Tensor& x);

private:
    std::int64_t in_;
    torch::nn::ConvTranspose2d deconv_{nullptr};
    torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(TransposedCBR);

/// a = cbr1(x); b = a + cbr2(a); out = cbr3(b) + cbr4(x). cbr1..3 are 3x3,
/// cbr4 (the outer skip) is 1x1. Shape preserving.
class DualResidualBlockImpl : public torch::nn::Module {
public:
    explicit DualResidualBlockImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    CBR cbr1{nullptr}, cbr2{nullptr}, cbr3{nullptr}, cbr4{nullptr};

private:
    std::int64_t channels_;
};
TORCH_MODULE(DualResidualBlock);

class DecoderStageImpl : public torch::nn::Module {
public:
    DecoderStageImpl(std::int64_t in, std::int64_t out, std::int64_t reduction_ratio = 16);
    torch::Tensor forward(const torch::Tensor& x);

    DualResidualBlock block{nullptr};
    ChannelAttention attention{nullptr};
    TransposedCBR upsample{nullptr};
};
TORCH_MODULE(DecoderStage);

/// Channel schedule mirrors the encoder: C5->C4->C3->C2->C1->C1.
class DecoderImpl : public torch::nn::Module {
public:
    DecoderImpl(const std::array<std::int64_t, kNumStages>& encoder_channels, std::int64_t reduction_ratio = 16);

    /// `fused[n-1]` is the fusion output of encoder stage n. fused[4] seeds the
    /// decoder; fused[4-k] is added to the output of decoder stage k (k=1..4),
    /// the pair whose resolutions match.
    torch::Tensor forward(const std::array<torch::Tensor, kNumStages>& fused);

    DecoderStage& stage(int k) { return stages_.at(static_cast<std::size_t>(k - 1)); }
    std::int64_t out_channels() const { return out_channels_; }

private:
    std::array<DecoderStage, kNumStages> stages_{nullptr, nullptr, nullptr, nullptr, nullptr};
    std::int64_t out_channels_;
};
TORCH_MODULE(Decoder);

}  // namespace amfnet
