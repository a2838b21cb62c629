#pragma once

// Shared domain types for the RGB-D fusion network.
//
// All grids use the channels-major (C,H,W) layout. Network-facing code works on
// batched tensors (N,C,H,W); the value types below hold single images and
// validate their invariants on construction.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace amfnet {

constexpr int kNumStages = 5;
constexpr int kNumClasses = 3;

enum class SegClass : std::int64_t { Background = 0, DrivableRoad = 1, NegativeObstacle = 2 };

const char* class_name(int c);

/// Spatial extent of a grid.
struct Shape2d {
    std::int64_t height = 0;
    std::int64_t width = 0;

    friend bool operator==(const Shape2d&, const Shape2d&) = default;
};

std::string to_string(const Shape2d& s);

/// One-based encoder/fusion stage number, 1..5.
class StageIndex {
public:
    constexpr explicit StageIndex(int n) : n_(n) {
        if (n < 1 || n > kNumStages) throw std::out_of_range("stage index must lie in [1,5]");
    }
    constexpr int value() const { return n_; }
    constexpr std::size_t offset() const { return static_cast<std::size_t>(n_ - 1); }

    friend constexpr bool operator==(StageIndex, StageIndex) = default;

private:
    int n_;
};

/// 3xHxW float image, values in [0,1].
class RGBImage {
public:
    explicit RGBImage(torch::Tensor data);
    const torch::Tensor& data() const { return data_; }
    Shape2d shape() const { return {data_.size(1), data_.size(2)}; }

private:
    torch::Tensor data_;
};

/// 1xHxW raw sensor depth. Zero means "no measurement", never "distance zero".
class DepthImage {
public:
    explicit DepthImage(torch::Tensor data);
    const torch::Tensor& data() const { return data_; }
    Shape2d shape() const { return {data_.size(1), data_.size(2)}; }

private:
    torch::Tensor data_;
};

/// 1xHxW binary validity map, elements exactly 0 or 1.
class Mask {
public:
    explicit Mask(torch::Tensor data);
    const torch::Tensor& data() const { return data_; }
    Shape2d shape() const { return {data_.size(-2), data_.size(-1)}; }

private:
    torch::Tensor data_;
};

/// HxW int64 class indices in {0,1,2}.
class LabelMap {
public:
    explicit LabelMap(torch::Tensor data);
    const torch::Tensor& data() const { return data_; }
    Shape2d shape() const { return {data_.size(0), data_.size(1)}; }

private:
    torch::Tensor data_;
};

// Tensor-level checks shared by all modules. Each throws std::invalid_argument
// with `what` naming the offending argument.
void require_finite(const torch::Tensor& t, const std::string& what);
void require_binary(const torch::Tensor& t, const std::string& what);
void require_labels(const torch::Tensor& t, const std::string& what);
void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const std::string& what);

/// raw/divisor clamped to [0,1]. Accepts any layout; zeros stay exactly zero.
torch::Tensor normalize_depth(const torch::Tensor& raw, double divisor);
torch::Tensor normalize_depth(const DepthImage& raw, double divisor);

}  // namespace amfnet
