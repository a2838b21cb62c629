#pragma once

// Confusion-matrix accumulation and per-class Acc / IoU / F1.

#include "amfnet/core.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <string>

namespace amfnet {

/// counts[g][p] = pixels of ground-truth class g predicted as p. Matrices
/// merge by integer addition.
class ConfusionMatrix {
public:
    using Counts = std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses>;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(const Counts& counts) : counts_(counts) {}

    /// Adds one pixel per element; pred and gt are same-shape int tensors.
    void accumulate(const torch::Tensor& pred, const torch::Tensor& gt);

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

    std::uint64_t at(int gt, int pred) const { return counts_[gt][pred]; }
    const Counts& counts() const { return counts_; }
    std::uint64_t total() const;

private:
    Counts counts_{};
};

struct ClassMetrics {
    double acc = 0.0;  // recall, TP/(TP+FN)
    double iou = 0.0;  // TP/(TP+FP+FN)
    double f1 = 0.0;   // 2TP/(2TP+FP+FN)
};

/// Fractions in [0,1]; reports print them as percentages.
struct MetricsReport {
    std::array<ClassMetrics, kNumClasses> per_class{};
    double mAcc = 0.0;
    double mIoU = 0.0;
    double mF1 = 0.0;
};

/// Zero denominators yield 0. Throws on an empty matrix.
MetricsReport compute_metrics(const ConfusionMatrix& conf);

/// Header + one row, columns: per-class Acc IoU F1, then mAcc mIoU mF1, in
/// percent with two decimals. `label` names the row.
std::string format_report_table(const MetricsReport& r, const std::string& label = "result");
nlohmann::json report_to_json(const MetricsReport& r);

}  // namespace amfnet
