#include "amfnet/checkpoint.hpp"

namespace amfnet {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& file, AMFNet& net, const TrainerState& state,
                     torch::optim::Optimizer* optimizer) {
    torch::serialize::OutputArchive archive;
    archive.write("config", c10::IValue(net->config().canonical()));
    archive.write("fingerprint", c10::IValue(net->config().fingerprint()));
    archive.write("variant", c10::IValue(net->config().variant.to_string()));
    archive.write("epoch", c10::IValue(static_cast<std::int64_t>(state.epoch)));
    archive.write("best_epoch", c10::IValue(static_cast<std::int64_t>(state.best_epoch)));
    archive.write("best_miou", c10::IValue(state.best_miou));
    archive.write("log", c10::IValue(state.log_jsonl));

    torch::serialize::OutputArchive model;
    net->save(model);
    archive.write("model", model);
    if (optimizer) {
        torch::serialize::OutputArchive opt;
        optimizer->save(opt);
        archive.write("optimizer", opt);
    }
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    archive.save_to(file.string());
}

namespace {

torch::serialize::InputArchive open_archive(const fs::path& file) {
    if (!fs::exists(file)) throw std::runtime_error("missing checkpoint: " + file.string());
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(file.string());
    } catch (const c10::Error& e) {
        throw std::runtime_error("cannot read checkpoint " + file.string() + ": " + e.what_without_backtrace());
    }
    return archive;
}

std::string read_string(torch::serialize::InputArchive& archive, const std::string& key) {
    c10::IValue v;
    if (!archive.try_read(key, v) || !v.isString()) throw std::runtime_error("checkpoint: missing '" + key + "'");
    return v.toStringRef();
}

NetworkConfig verified_config(torch::serialize::InputArchive& archive, const fs::path& file) {
    auto config = NetworkConfig::from_canonical(read_string(archive, "config"));
    if (config.fingerprint() != read_string(archive, "fingerprint")) {
        throw std::runtime_error("checkpoint " + file.string() + ": stored fingerprint does not match its config");
    }
    return config;
}

void read_state(torch::serialize::InputArchive& archive, TrainerState& state) {
    c10::IValue v;
    if (archive.try_read("epoch", v)) state.epoch = static_cast<int>(v.toInt());
    if (archive.try_read("best_epoch", v)) state.best_epoch = static_cast<int>(v.toInt());
    if (archive.try_read("best_miou", v)) state.best_miou = v.toDouble();
    if (archive.try_read("log", v)) state.log_jsonl = v.toStringRef();
}

void read_tensors(torch::serialize::InputArchive& archive, AMFNet& net, torch::optim::Optimizer* optimizer) {
    torch::serialize::InputArchive model;
    if (!archive.try_read("model", model)) throw std::runtime_error("checkpoint: missing model tensors");
    const auto before = net->named_parameters();
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> shapes;
    for (const auto& p : before) shapes.emplace_back(p.key(), p.value().sizes().vec());
    net->load(model);
    for (const auto& [name, shape] : shapes) {
        if (net->named_parameters()[name].sizes().vec() != shape) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' has an unexpected shape");
        }
    }
    if (optimizer) {
        torch::serialize::InputArchive opt;
        if (archive.try_read("optimizer", opt)) optimizer->load(opt);
    }
}

}  // namespace

NetworkConfig read_checkpoint_config(const fs::path& file) {
    auto archive = open_archive(file);
    return verified_config(archive, file);
}

AMFNet load_network(const fs::path& file, TrainerState* state) {
    auto archive = open_archive(file);
    AMFNet net(verified_config(archive, file));
    read_tensors(archive, net, nullptr);
    if (state) read_state(archive, *state);
    return net;
}

void load_checkpoint(const fs::path& file, AMFNet& net, TrainerState* state, torch::optim::Optimizer* optimizer) {
    auto archive = open_archive(file);
    const auto stored = verified_config(archive, file);
    if (stored.fingerprint() != net->config().fingerprint()) {
        throw std::runtime_error("checkpoint " + file.string() + ": config fingerprint mismatch (checkpoint " +
                                 stored.fingerprint() + ", network " + net->config().fingerprint() + ")");
    }
    read_tensors(archive, net, optimizer);
    if (state) read_state(archive, *state);
}

}  // namespace amfnet
