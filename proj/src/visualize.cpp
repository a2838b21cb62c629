#include "amfnet/visualize.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cstdio>

namespace amfnet {

cv::Vec3b class_color(int c) {
    switch (c) {
        case 1: return {0, 200, 0};
        case 2: return {0, 0, 230};
        default: return {0, 0, 0};
    }
}

cv::Mat mask_image(const torch::Tensor& mask) {
    auto m = mask.dim() == 3 ? mask.squeeze(0) : mask;
    TORCH_CHECK(m.dim() == 2, "mask_image: expected (H,W) or (1,H,W)");
    auto bytes = (m.to(torch::kFloat32) * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
    return cv::Mat(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_8UC1, bytes.data_ptr()).clone();
}

cv::Mat overlay_image(const torch::Tensor& rgb, const torch::Tensor& labels, double alpha) {
    TORCH_CHECK(rgb.dim() == 3 && rgb.size(0) == 3, "overlay_image: rgb must be (3,H,W)");
    TORCH_CHECK(labels.dim() == 2 && labels.size(0) == rgb.size(1) && labels.size(1) == rgb.size(2),
                "overlay_image: labels must match the image size");
    const auto h = static_cast<int>(rgb.size(1));
    const auto w = static_cast<int>(rgb.size(2));
    auto img = rgb.to(torch::kFloat32).contiguous();
    auto lab = labels.to(torch::kInt64).contiguous();
    auto ia = img.accessor<float, 3>();
    auto la = lab.accessor<std::int64_t, 2>();
    cv::Mat out(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int c = static_cast<int>(la[y][x]);
            const auto col = class_color(c);
            const double a = c == 0 ? 0.0 : alpha;
            auto& px = out.at<cv::Vec3b>(y, x);
            for (int k = 0; k < 3; ++k) {
                const double base = 255.0 * ia[2 - k][y][x];  // BGR order
                px[k] = cv::saturate_cast<std::uint8_t>((1.0 - a) * base + a * col[k]);
            }
        }
    }
    return out;
}

std::vector<std::string> weight_dump_lines(const ForwardTrace& trace, std::int64_t index) {
    std::vector<std::string> lines;
    char buf[256];
    for (int i = 0; i < kNumStages; ++i) {
        const auto& st = trace.stages[static_cast<std::size_t>(i)];
        const double valid = st.mask.defined() ? st.mask[index].to(torch::kFloat64).mean().item<double>() : 0.0;
        if (!st.amf) {
            std::snprintf(buf, sizeof buf, "stage=%d fusion=add mask_valid=%.6f", i + 1, valid);
        } else {
            const auto& a = *st.amf;
            const auto md = a.masks.m_depth[index].to(torch::kFloat64);
            std::snprintf(buf, sizeof buf,
                          "stage=%d fusion=amf w_rgb=%.9f w_depth=%.9f m_depth_mean=%.6f m_depth_min=%.6f "
                          "m_depth_max=%.6f mask_valid=%.6f",
                          i + 1, a.weights.w_rgb[index].item<double>(), a.weights.w_depth[index].item<double>(),
                          md.mean().item<double>(), md.min().item<double>(), md.max().item<double>(), valid);
        }
        lines.emplace_back(buf);
    }
    return lines;
}

void write_image(const std::filesystem::path& file, const cv::Mat& image) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    if (!cv::imwrite(file.string(), image)) throw std::runtime_error("cannot write image: " + file.string());
}

}  // namespace amfnet
