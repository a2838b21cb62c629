#pragma once

// Small building blocks shared by the encoder, fusion and decoder modules.

#include <torch/torch.h>

namespace amfnet {

/// BatchNorm1d for per-sample pooled vectors. Normalises with the running
/// statistics in both modes, so each sample's output is independent of the
/// rest of the batch; training batches of two or more samples update the
/// running statistics.
class RunningBatchNorm1dImpl : public torch::nn::BatchNorm1dImpl {
public:
    using torch::nn::BatchNorm1dImpl::BatchNorm1dImpl;

    torch::Tensor forward(const torch::Tensor& input);
};
TORCH_MODULE(RunningBatchNorm1d);

/// He-normal weights (fan-out, ReLU gain), zero bias. Used for convolutions
/// that feed a batch norm and for the classifier head; the rest keep the
/// framework default.
torch::nn::Conv2d he_conv2d(const torch::nn::Conv2dOptions& options);
torch::nn::ConvTranspose2d he_conv_transpose2d(const torch::nn::ConvTranspose2dOptions& options);

std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace amfnet
