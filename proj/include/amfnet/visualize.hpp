#pragma once

// Image outputs for the predict and maskvis commands.

#include "amfnet/network.hpp"

#include <opencv2/core.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace amfnet {

/// BGR colour per class: background black, road green, negative obstacle red.
cv::Vec3b class_color(int c);

/// 8-bit single-channel image, 0 -> black, 1 -> white. Accepts (H,W) or (1,H,W).
cv::Mat mask_image(const torch::Tensor& mask);

/// RGB image (3,H,W) blended with class colours of `labels` (H,W); BGR output.
cv::Mat overlay_image(const torch::Tensor& rgb, const torch::Tensor& labels, double alpha = 0.5);

/// One line per stage for sample `index` of the batch, e.g.
/// "stage=2 fusion=amf w_rgb=0.512 w_depth=0.488 m_depth_mean=0.301 ...".
std::vector<std::string> weight_dump_lines(const ForwardTrace& trace, std::int64_t index = 0);

void write_image(const std::filesystem::path& file, const cv::Mat& image);

}  // namespace amfnet
