#pragma once

// Checkpoint archives: hierarchical parameter/buffer names -> tensors, the
// canonical network config and its fingerprint, plus optional trainer state.

#include "amfnet/network.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace amfnet {

struct TrainerState {
    int epoch = -1;  // last completed epoch, -1 before training
    int best_epoch = -1;
    double best_miou = -1.0;
    std::string log_jsonl;  // epoch records so far
};

void save_checkpoint(const std::filesystem::path& file, AMFNet& net, const TrainerState& state = {},
                     torch::optim::Optimizer* optimizer = nullptr);

/// Rebuilds the network from the stored config and loads its tensors.
/// Throws if the stored fingerprint does not match the stored config.
AMFNet load_network(const std::filesystem::path& file, TrainerState* state = nullptr);

/// Loads into an existing network. Throws if the checkpoint fingerprint
/// differs from net's config fingerprint.
void load_checkpoint(const std::filesystem::path& file, AMFNet& net, TrainerState* state = nullptr,
                     torch::optim::Optimizer* optimizer = nullptr);

/// Reads only the stored network config.
NetworkConfig read_checkpoint_config(const std::filesystem::path& file);

}  // namespace amfnet
