#include "amfnet/metrics.hpp"

#include <cstdio>

namespace amfnet {

void ConfusionMatrix::accumulate(const torch::Tensor& pred, const torch::Tensor& gt) {
    require_same_shape(pred, gt, "accumulate");
    auto p = pred.to(torch::kInt64).reshape({-1});
    auto g = gt.to(torch::kInt64).reshape({-1});
    require_labels(p, "accumulate prediction");
    require_labels(g, "accumulate ground truth");
    auto bins = torch::bincount(g * kNumClasses + p, /*weights=*/{}, kNumClasses * kNumClasses).contiguous();
    const auto* b = bins.data_ptr<std::int64_t>();
    for (int i = 0; i < kNumClasses; ++i) {
        for (int j = 0; j < kNumClasses; ++j) counts_[i][j] += static_cast<std::uint64_t>(b[i * kNumClasses + j]);
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (int i = 0; i < kNumClasses; ++i) {
        for (int j = 0; j < kNumClasses; ++j) counts_[i][j] += other.counts_[i][j];
    }
    return *this;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts_) {
        for (auto v : row) t += v;
    }
    return t;
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& conf) {
    if (conf.total() == 0) throw std::invalid_argument("compute_metrics: no pixels accumulated");
    MetricsReport r;
    for (int c = 0; c < kNumClasses; ++c) {
        double tp = static_cast<double>(conf.at(c, c));
        double fn = 0.0;
        double fp = 0.0;
        for (int k = 0; k < kNumClasses; ++k) {
            if (k == c) continue;
            fn += static_cast<double>(conf.at(c, k));
            fp += static_cast<double>(conf.at(k, c));
        }
        auto& m = r.per_class[c];
        m.acc = ratio(tp, tp + fn);
        m.iou = ratio(tp, tp + fp + fn);
        m.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
        r.mAcc += m.acc / kNumClasses;
        r.mIoU += m.iou / kNumClasses;
        r.mF1 += m.f1 / kNumClasses;
    }
    return r;
}

std::string format_report_table(const MetricsReport& r, const std::string& label) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s", "");
    out += buf;
    for (int c = 0; c < kNumClasses; ++c) {
        std::snprintf(buf, sizeof buf, " | %-20s", class_name(c));
        out += buf;
    }
    out += " |\n";
    std::snprintf(buf, sizeof buf, "%-16s", "");
    out += buf;
    for (int c = 0; c < kNumClasses; ++c) out += " |    Acc    IoU     F1";
    out += " |   mAcc   mIoU    mF1\n";
    std::snprintf(buf, sizeof buf, "%-16s", label.c_str());
    out += buf;
    for (const auto& m : r.per_class) {
        std::snprintf(buf, sizeof buf, " | %6.2f %6.2f %6.2f", 100.0 * m.acc, 100.0 * m.iou, 100.0 * m.f1);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, " | %6.2f %6.2f %6.2f\n", 100.0 * r.mAcc, 100.0 * r.mIoU, 100.0 * r.mF1);
    out += buf;
    return out;
}

nlohmann::json report_to_json(const MetricsReport& r) {
    auto pct = [](double v) { return std::round(v * 10000.0) / 100.0; };
    nlohmann::json classes = nlohmann::json::array();
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& m = r.per_class[c];
        classes.push_back({{"class", class_name(c)}, {"Acc", pct(m.acc)}, {"IoU", pct(m.iou)}, {"F1", pct(m.f1)}});
    }
    return {{"classes", classes}, {"mAcc", pct(r.mAcc)}, {"mIoU", pct(r.mIoU)}, {"mF1", pct(r.mF1)}};
}

}  // namespace amfnet
