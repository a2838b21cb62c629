#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include "amfnet/layers.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace amfnet::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("amfnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // "<tensor>[<flat index>] analytic=.. numeric=.."
    int coordinates = 0;
};

struct NamedTensor {
    std::string name;
    torch::Tensor tensor;  // leaf with requires_grad
};

/// Central finite differences against autograd for a scalar `loss`; a
/// coordinate that disagrees is re-measured at step/10 and step/100 and keeps
/// its closest estimate.
/// Coordinates with |analytic| and |numeric| both below `floor` are skipped.
/// `per_tensor` < 0 checks every coordinate, otherwise that many sampled ones.
inline GradCheckResult gradcheck(const std::function<torch::Tensor()>& loss, const std::vector<NamedTensor>& leaves,
                                 double step, int per_tensor, std::uint64_t seed = 0, double floor = 1e-7) {
    for (const auto& l : leaves) {
        if (l.tensor.grad().defined()) l.tensor.mutable_grad().zero_();
    }
    loss().backward();
    std::mt19937_64 rng(seed);
    GradCheckResult r;
    torch::NoGradGuard no_grad;
    for (const auto& l : leaves) {
        auto flat = l.tensor.detach().view({-1});
        const auto grad = l.tensor.grad().detach().reshape({-1}).clone();
        std::vector<std::int64_t> coords;
        if (per_tensor < 0 || flat.numel() <= per_tensor) {
            for (std::int64_t i = 0; i < flat.numel(); ++i) coords.push_back(i);
        } else {
            std::uniform_int_distribution<std::int64_t> pick(0, flat.numel() - 1);
            for (int k = 0; k < per_tensor; ++k) coords.push_back(pick(rng));
        }
        for (auto i : coords) {
            const double orig = flat[i].item<double>();
            const double analytic = grad[i].item<double>();
            auto central = [&](double h) {
                flat[i].fill_(orig + h);
                const double up = loss().item<double>();
                flat[i].fill_(orig - h);
                const double down = loss().item<double>();
                flat[i].fill_(orig);
                return (up - down) / (2.0 * h);
            };
            // A mismatch is retried with smaller steps, since a ReLU or max-pool
            // switch point inside +-h breaks the difference quotient.
            double numeric = 0.0, rel = 0.0, scale = 0.0;
            for (double h = step; h >= step * 0.01; h *= 0.1) {
                const double n = central(h);
                const double sc = std::max(std::abs(analytic), std::abs(n));
                const double e = sc > 0.0 ? std::abs(analytic - n) / sc : 0.0;
                if (h == step || e < rel) {
                    numeric = n;
                    rel = e;
                    scale = sc;
                }
                if (rel < 1e-4) break;
            }
            if (scale < floor) continue;
            ++r.coordinates;
            if (rel > r.max_rel_error) {
                r.max_rel_error = rel;
                r.worst = l.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                          " numeric=" + std::to_string(numeric);
            }
        }
    }
    return r;
}

/// All parameters of `module` as gradcheck leaves.
inline std::vector<NamedTensor> parameter_leaves(torch::nn::Module& module) {
    std::vector<NamedTensor> out;
    for (const auto& p : module.named_parameters()) out.push_back({p.key(), p.value()});
    return out;
}

/// Train mode, except running-statistic norms, whose forward must not mutate
/// state between finite-difference evaluations.
inline void gradcheck_mode(torch::nn::Module& module) {
    module.train();
    for (auto& m : module.modules(/*include_self=*/false)) {
        if (m->as<RunningBatchNorm1d>()) m->eval();
    }
}

/// Deterministic random projection loss: sum(out * R).
inline torch::Tensor projection(const torch::Tensor& out, const torch::Tensor& r) { return (out * r).sum(); }

}  // namespace amfnet::testing
