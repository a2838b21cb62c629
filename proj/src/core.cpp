#include "amfnet/core.hpp"

namespace amfnet {

const char* class_name(int c) {
    switch (c) {
        case 0: return "Background";
        case 1: return "Drivable Road";
        case 2: return "Negative Obstacles";
        default: return "?";
    }
}

std::string to_string(const Shape2d& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width);
}

void require_finite(const torch::Tensor& t, const std::string& what) {
    if (!torch::isfinite(t).all().item<bool>()) {
        throw std::invalid_argument(what + ": contains non-finite values");
    }
}

void require_binary(const torch::Tensor& t, const std::string& what) {
    if (!((t == 0) | (t == 1)).all().item<bool>()) {
        throw std::invalid_argument(what + ": mask elements must be exactly 0 or 1");
    }
}

void require_labels(const torch::Tensor& t, const std::string& what) {
    if (t.numel() > 0 && (t.min().item<std::int64_t>() < 0 || t.max().item<std::int64_t>() >= kNumClasses)) {
        throw std::invalid_argument(what + ": class index outside {0,1,2}");
    }
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const std::string& what) {
    if (a.sizes() != b.sizes()) {
        std::ostringstream msg;
        msg << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
        throw std::invalid_argument(msg.str());
    }
}

namespace {

void require_image(const torch::Tensor& t, std::int64_t channels, const char* what) {
    if (!t.defined() || t.dim() != 3 || t.size(0) != channels || t.size(1) <= 0 || t.size(2) <= 0) {
        throw std::invalid_argument(std::string(what) + ": expected a " + std::to_string(channels) +
                                    "xHxW tensor with H,W > 0");
    }
}

}  // namespace

RGBImage::RGBImage(torch::Tensor data) : data_(std::move(data)) {
    require_image(data_, 3, "RGBImage");
    data_ = data_.to(torch::kFloat32);
    require_finite(data_, "RGBImage");
    if (data_.min().item<float>() < 0.0F || data_.max().item<float>() > 1.0F) {
        throw std::invalid_argument("RGBImage: values must lie in [0,1]");
    }
}

DepthImage::DepthImage(torch::Tensor data) : data_(std::move(data)) {
    require_image(data_, 1, "DepthImage");
    data_ = data_.to(torch::kFloat32);
    require_finite(data_, "DepthImage");
    if (data_.min().item<float>() < 0.0F) throw std::invalid_argument("DepthImage: negative depth reading");
}

Mask::Mask(torch::Tensor data) : data_(std::move(data)) {
    require_image(data_, 1, "Mask");
    data_ = data_.to(torch::kFloat32);
    require_binary(data_, "Mask");
}

LabelMap::LabelMap(torch::Tensor data) : data_(std::move(data)) {
    if (!data_.defined() || data_.dim() != 2 || data_.size(0) <= 0 || data_.size(1) <= 0) {
        throw std::invalid_argument("LabelMap: expected an HxW tensor with H,W > 0");
    }
    data_ = data_.to(torch::kInt64);
    require_labels(data_, "LabelMap");
}

torch::Tensor normalize_depth(const torch::Tensor& raw, double divisor) {
    if (!(divisor > 0.0) || !std::isfinite(divisor)) {
        throw std::invalid_argument("normalize_depth: divisor must be positive and finite");
    }
    require_finite(raw, "normalize_depth");
    auto x = raw.is_floating_point() ? raw : raw.to(torch::kFloat32);
    return (x / divisor).clamp(0.0, 1.0);
}

torch::Tensor normalize_depth(const DepthImage& raw, double divisor) {
    return normalize_depth(raw.data(), divisor);
}

}  // namespace amfnet
