#include "amfnet/layers.hpp"

namespace amfnet {

namespace F = torch::nn::functional;

torch::Tensor RunningBatchNorm1dImpl::forward(const torch::Tensor& input) {
    if (is_training() && input.size(0) > 1) {
        torch::NoGradGuard no_grad;
        const double m = options.momentum().value_or(0.1);
        running_mean.mul_(1.0 - m).add_(input.mean(0), m);
        running_var.mul_(1.0 - m).add_(input.var(0, /*unbiased=*/true), m);
        num_batches_tracked.add_(1);
    }
    return F::batch_norm(input, running_mean, running_var,
                         F::BatchNormFuncOptions().weight(weight).bias(bias).training(false).eps(options.eps()));
}

torch::nn::Conv2d he_conv2d(const torch::nn::Conv2dOptions& options) {
    torch::nn::Conv2d conv(options);
    torch::NoGradGuard no_grad;
    torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    if (conv->bias.defined()) conv->bias.zero_();
    return conv;
}

torch::nn::ConvTranspose2d he_conv_transpose2d(const torch::nn::ConvTranspose2dOptions& options) {
    torch::nn::ConvTranspose2d conv(options);
    torch::NoGradGuard no_grad;
    torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    if (conv->bias.defined()) conv->bias.zero_();
    return conv;
}

std::int64_t parameter_count(const torch::nn::Module& module) {
    std::int64_t total = 0;
    for (const auto& p : module.parameters()) total += p.numel();
    return total;
}

}  // namespace amfnet
