#pragma once

// SGD training with per-epoch exponential learning-rate decay, per-epoch
// validation and best-mIoU checkpointing.

#include "amfnet/checkpoint.hpp"
#include "amfnet/data.hpp"
#include "amfnet/metrics.hpp"
#include "amfnet/network.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace amfnet {

struct TrainConfig {
    double initial_lr = 0.01;
    double momentum = 0.9;
    double decay = 0.95;  // lr multiplier per epoch
    int epochs = 30;
    int batch_size = 4;
    std::uint64_t seed = 0;
    Shape2d input_resolution{96, 128};
    double width_multiplier = 0.125;
    bool full_depth = false;
    AblationSpec variant = AblationSpec::from_row('J');
    std::array<double, kNumClasses> class_weights{1.0, 1.0, 1.0};
    /// Random horizontal flips of training samples.
    bool augment_flip = true;
    /// Single-threaded deterministic kernels.
    bool strict = true;
    /// Depth normaliser; the 99th percentile of valid training depth when unset.
    std::optional<double> depth_divisor;
    /// Stop after this many optimiser steps (0 = no limit).
    int max_iterations = 0;
    /// Recompute 2-D batch-norm statistics over the training split before
    /// each validation and checkpoint.
    bool population_bn = true;

    /// Full-scale profile: 288x512 inputs, full width, encoder depths (3,4,6,3).
    static TrainConfig full_profile();

    void validate() const;
    NetworkConfig network_config(double divisor) const;
};

/// initial_lr * decay^epoch.
double lr_at(int epoch, const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    /// Percentages; absent when there is no validation split.
    std::optional<double> val_mAcc, val_mIoU, val_mF1;

    std::string to_json_line() const;
    static EpochRecord from_json_line(const std::string& line);
};

struct Datasets {
    std::vector<Sample> train;
    std::vector<Sample> val;
};

struct TrainResult {
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::vector<EpochRecord> log;
    /// Loss of every optimiser step run in this call.
    std::vector<double> step_losses;
    int best_epoch = -1;
};

/// Applies strict-mode threading/determinism settings.
void apply_execution_mode(bool strict);

/// Seeds torch with config.seed and builds the configured variant; the depth
/// divisor comes from the training split unless set in the config.
AMFNet make_network(const TrainConfig& config, std::span<const Sample> train_split);

/// Trains `net` in place. Writes best.ckpt, last.ckpt and train_log.jsonl
/// under run_dir. `resume_from` continues a run from its last.ckpt (epoch
/// counter, optimiser state and log). Throws std::runtime_error naming the
/// batch when the loss becomes non-finite.
TrainResult train(AMFNet& net, const Datasets& data, const TrainConfig& config, const std::filesystem::path& run_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// Replaces every BatchNorm2d running mean/variance with the average over
/// `samples`, forwarded in batches of `batch_size` without gradients.
void recompute_bn_statistics(AMFNet& net, std::span<const Sample> samples, int batch_size = 8);

/// Per-pixel argmax labels (N,H,W).
torch::Tensor predict(AMFNet& net, const Batch& batch);

/// Eval-mode inference over `samples`, accumulated into one matrix.
ConfusionMatrix evaluate(AMFNet& net, std::span<const Sample> samples, int batch_size = 4);

}  // namespace amfnet
