#include "amfnet/train.hpp"

#include "amfnet/layers.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace amfnet {

namespace fs = std::filesystem;

TrainConfig TrainConfig::full_profile() {
    TrainConfig c;
    c.input_resolution = {288, 512};
    c.width_multiplier = 1.0;
    c.full_depth = true;
    return c;
}

void TrainConfig::validate() const {
    auto unit = [](double v, const char* name) {
        if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument(std::string("train: ") + name + " must lie in (0,1]");
    };
    unit(initial_lr, "initial_lr");
    unit(momentum, "momentum");
    unit(decay, "decay");
    if (epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
    if (batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
    if (max_iterations < 0) throw std::invalid_argument("train: max_iterations must be non-negative");
    stage_shapes(input_resolution);
    for (double w : class_weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("train: class weights must be finite and >= 0");
    }
    if (depth_divisor && !(*depth_divisor > 0.0)) throw std::invalid_argument("train: depth_divisor must be positive");
}

NetworkConfig TrainConfig::network_config(double divisor) const {
    NetworkConfig n;
    n.input = input_resolution;
    n.width_multiplier = width_multiplier;
    n.full_depth = full_depth;
    n.depth_divisor = divisor;
    n.variant = variant;
    return n;
}

double lr_at(int epoch, const TrainConfig& config) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be non-negative");
    return config.initial_lr * std::pow(config.decay, epoch);
}

std::string EpochRecord::to_json_line() const {
    nlohmann::json j = {{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}};
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    j["val_mAcc"] = opt(val_mAcc);
    j["val_mIoU"] = opt(val_mIoU);
    j["val_mF1"] = opt(val_mF1);
    return j.dump();
}

EpochRecord EpochRecord::from_json_line(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.lr = j.at("lr").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    auto opt = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        return j[key].get<double>();
    };
    r.val_mAcc = opt("val_mAcc");
    r.val_mIoU = opt("val_mIoU");
    r.val_mF1 = opt("val_mF1");
    return r;
}

void apply_execution_mode(bool strict) {
    if (strict) {
        torch::set_num_threads(1);
        at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/false);
    }
}

AMFNet make_network(const TrainConfig& config, std::span<const Sample> train_split) {
    config.validate();
    const double divisor = config.depth_divisor ? *config.depth_divisor : depth_quantile(train_split, 0.99);
    torch::manual_seed(config.seed);
    return build_variant(config.variant, config.network_config(divisor));
}

torch::Tensor predict(AMFNet& net, const Batch& batch) {
    torch::NoGradGuard no_grad;
    const bool was_training = net->is_training();
    net->eval();
    auto labels = net->forward(batch.rgb, batch.depth).argmax(1);
    net->train(was_training);
    return labels;
}

void recompute_bn_statistics(AMFNet& net, std::span<const Sample> samples, int batch_size) {
    if (batch_size <= 0) throw std::invalid_argument("recompute_bn_statistics: batch_size must be positive");
    if (samples.empty()) return;
    torch::NoGradGuard no_grad;
    std::vector<std::pair<torch::nn::BatchNorm2dImpl*, std::optional<double>>> norms;
    for (auto& m : net->modules(/*include_self=*/false)) {
        if (auto* bn = m->as<torch::nn::BatchNorm2d>()) {
            bn->reset_running_stats();
            norms.emplace_back(bn, bn->options.momentum());
            bn->options.momentum(std::nullopt);  // cumulative average
        }
    }
    const bool was_training = net->is_training();
    net->train();
    for (auto& m : net->modules(/*include_self=*/false)) {
        if (m->as<RunningBatchNorm1d>()) m->eval();  // keeps its own statistics
    }
    for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(batch_size)) {
        const auto n = std::min(samples.size() - i, static_cast<std::size_t>(batch_size));
        auto batch = collate(samples.subspan(i, n));
        net->forward(batch.rgb, batch.depth);
    }
    for (auto& [bn, momentum] : norms) bn->options.momentum(momentum);
    net->train(was_training);
}

ConfusionMatrix evaluate(AMFNet& net, std::span<const Sample> samples, int batch_size) {
    ConfusionMatrix conf;
    for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(batch_size)) {
        const auto n = std::min(samples.size() - i, static_cast<std::size_t>(batch_size));
        auto batch = collate(samples.subspan(i, n));
        conf.accumulate(predict(net, batch), batch.labels);
    }
    return conf;
}

namespace {

std::vector<Sample> conform(const std::vector<Sample>& samples, Shape2d resolution) {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(resize_sample(s, resolution));
    return out;
}

void write_log(const fs::path& file, const std::vector<EpochRecord>& log) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    for (const auto& r : log) out << r.to_json_line() << "\n";
}

std::string join_log(const std::vector<EpochRecord>& log) {
    std::string s;
    for (const auto& r : log) s += r.to_json_line() + "\n";
    return s;
}

std::vector<EpochRecord> split_log(const std::string& text) {
    std::vector<EpochRecord> log;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) log.push_back(EpochRecord::from_json_line(line));
    }
    return log;
}

}  // namespace

TrainResult train(AMFNet& net, const Datasets& data, const TrainConfig& config, const fs::path& run_dir,
                  const std::optional<fs::path>& resume_from) {
    config.validate();
    if (data.train.empty()) throw std::invalid_argument("train: empty training split");
    apply_execution_mode(config.strict);
    fs::create_directories(run_dir);

    const auto train_set = conform(data.train, config.input_resolution);
    const auto val_set = conform(data.val, config.input_resolution);

    torch::optim::SGD optimizer(net->parameters(),
                                torch::optim::SGDOptions(config.initial_lr).momentum(config.momentum));

    TrainResult result;
    result.best_checkpoint = run_dir / "best.ckpt";
    result.last_checkpoint = run_dir / "last.ckpt";
    TrainerState state;
    if (resume_from) {
        load_checkpoint(*resume_from, net, &state, &optimizer);
        result.log = split_log(state.log_jsonl);
    }
    result.best_epoch = state.best_epoch;

    int steps = 0;
    for (int epoch = state.epoch + 1; epoch < config.epochs; ++epoch) {
        if (config.max_iterations > 0 && steps >= config.max_iterations) break;
        const double lr = lr_at(epoch, config);
        for (auto& group : optimizer.param_groups()) group.options().set_lr(lr);

        std::mt19937_64 rng(sample_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        net->train();
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            if (config.max_iterations > 0 && steps >= config.max_iterations) break;
            std::vector<Sample> batch_samples;
            for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(config.batch_size)); ++i) {
                const auto& s = train_set[order[i]];
                const bool flip = config.augment_flip && std::bernoulli_distribution(0.5)(rng);
                batch_samples.push_back(flip ? hflip(s) : s);
            }
            auto batch = collate(batch_samples);
            optimizer.zero_grad();
            auto loss = segmentation_loss(net->forward(batch.rgb, batch.depth), batch.labels, config.class_weights);
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                std::string ids;
                for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
                throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batches) + " (samples " + ids + ")");
            }
            loss.backward();
            optimizer.step();
            loss_sum += value;
            result.step_losses.push_back(value);
            ++batches;
            ++steps;
        }

        EpochRecord record;
        record.epoch = epoch;
        record.lr = lr;
        record.train_loss = batches > 0 ? loss_sum / batches : 0.0;
        if (config.population_bn && batches > 0) recompute_bn_statistics(net, train_set);
        double score = -record.train_loss;  // selection key when there is no validation split
        if (!val_set.empty()) {
            const auto report = compute_metrics(evaluate(net, val_set, config.batch_size));
            record.val_mAcc = 100.0 * report.mAcc;
            record.val_mIoU = 100.0 * report.mIoU;
            record.val_mF1 = 100.0 * report.mF1;
            score = *record.val_mIoU;
        }
        result.log.push_back(record);

        state.epoch = epoch;
        if (state.best_epoch < 0 || score > state.best_miou) {
            state.best_miou = score;
            state.best_epoch = epoch;
            state.log_jsonl = join_log(result.log);
            save_checkpoint(result.best_checkpoint, net, state);
        }
        state.log_jsonl = join_log(result.log);
        save_checkpoint(result.last_checkpoint, net, state, &optimizer);
        write_log(run_dir / "train_log.jsonl", result.log);
    }
    result.best_epoch = state.best_epoch;
    return result;
}

}  // namespace amfnet
