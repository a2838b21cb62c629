// amfnet command-line tool: synth, train, eval, ablate, predict, maskvis.
//
// Every subcommand accepts --config <file> with key=value lines named after
// the long flags (e.g. "epochs=30"). Flags override the file, the file
// overrides built-in defaults. The effective configuration is written to
// effective_config.ini in each output directory.

#include "amfnet/checkpoint.hpp"
#include "amfnet/data.hpp"
#include "amfnet/metrics.hpp"
#include "amfnet/train.hpp"
#include "amfnet/visualize.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace amfnet;

namespace {

Shape2d parse_resolution(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw std::invalid_argument("resolution must look like HxW, got '" + text + "'");
    try {
        std::size_t end_h = 0, end_w = 0;
        const auto h = std::stoll(text.substr(0, x), &end_h);
        const auto w = std::stoll(text.substr(x + 1), &end_w);
        if (end_h != x || end_w != text.size() - x - 1) throw std::invalid_argument("");
        return {h, w};
    } catch (const std::exception&) {
        throw std::invalid_argument("resolution must look like HxW, got '" + text + "'");
    }
}

void write_text(const fs::path& file, const std::string& text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << text;
    if (!out) throw std::runtime_error("cannot write " + file.string());
}

void echo_config(const CLI::App& cmd, const fs::path& dir) {
    write_text(dir / "effective_config.ini", cmd.config_to_str(true, false));
}

/// Flags shared by train and ablate.
struct TrainFlags {
    std::string data;
    std::string out;
    std::string variant = "J";
    double width = 0.125;
    std::string resolution = "96x128";
    bool full_depth = false;
    int epochs = 30;
    int batch_size = 4;
    double lr = 0.01;
    double momentum = 0.9;
    double decay = 0.95;
    std::uint64_t seed = 0;
    std::vector<double> class_weights{1.0, 1.0, 1.0};
    bool no_flip = false;
    bool running_bn = false;
    bool non_strict = false;
    double depth_divisor = 0.0;
    int max_iterations = 0;
    std::string train_split = "train";
    std::string val_split = "val";

    void add_to(CLI::App& cmd) {
        cmd.add_option("--data", data, "Dataset root (DRNO layout with manifest.json)")->required();
        cmd.add_option("--out", out, "Run directory")->required();
        cmd.add_option("--width", width, "Channel width multiplier")->capture_default_str();
        cmd.add_option("--resolution", resolution, "Network input HxW (multiples of 32)")->capture_default_str();
        cmd.add_flag("--full-depth", full_depth, "Encoder group depths (3,4,6,3) instead of (1,1,1,1)");
        cmd.add_option("--epochs", epochs)->capture_default_str();
        cmd.add_option("--batch-size", batch_size)->capture_default_str();
        cmd.add_option("--lr", lr, "Initial learning rate")->capture_default_str();
        cmd.add_option("--momentum", momentum)->capture_default_str();
        cmd.add_option("--decay", decay, "Per-epoch learning-rate multiplier")->capture_default_str();
        cmd.add_option("--class-weights", class_weights, "Loss weight per class")->expected(3)->capture_default_str();
        cmd.add_flag("--no-flip", no_flip, "Disable random horizontal flips");
        cmd.add_flag("--running-bn", running_bn,
                     "Validate with running batch-norm averages instead of training-split statistics");
        cmd.add_flag("--non-strict", non_strict, "Allow multi-threaded, non-deterministic kernels");
        cmd.add_option("--depth-divisor", depth_divisor, "Depth normaliser (0 = 99th percentile of training depth)")
            ->capture_default_str();
        cmd.add_option("--max-iterations", max_iterations, "Stop after this many steps (0 = no limit)")
            ->capture_default_str();
        cmd.add_option("--train-split", train_split)->capture_default_str();
        cmd.add_option("--val-split", val_split)->capture_default_str();
    }

    TrainConfig config() const {
        TrainConfig c;
        c.initial_lr = lr;
        c.momentum = momentum;
        c.decay = decay;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.seed = seed;
        c.input_resolution = parse_resolution(resolution);
        c.width_multiplier = width;
        c.full_depth = full_depth;
        c.variant = AblationSpec::parse(variant);
        if (class_weights.size() != kNumClasses) throw std::invalid_argument("--class-weights needs 3 values");
        std::copy(class_weights.begin(), class_weights.end(), c.class_weights.begin());
        c.augment_flip = !no_flip;
        c.population_bn = !running_bn;
        c.strict = !non_strict;
        if (depth_divisor > 0.0) c.depth_divisor = depth_divisor;
        c.max_iterations = max_iterations;
        c.validate();
        return c;
    }

    Datasets load() const {
        Datasets d;
        d.train = load_split(data, train_split);
        if (!val_split.empty()) d.val = load_split(data, val_split);
        return d;
    }
};

/// Sample source for predict/maskvis: a dataset id or a pair of files.
struct InputFlags {
    std::string data, id, rgb, depth;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--data", data, "Dataset root");
        cmd.add_option("--id", id, "Sample id inside --data");
        cmd.add_option("--rgb", rgb, "RGB PNG (8-bit, 3 channels)");
        cmd.add_option("--depth", depth, "Depth PNG (16-bit, millimetres)");
    }

    bool from_dataset() const { return !data.empty() || !id.empty(); }

    std::string name() const { return from_dataset() ? id : fs::path(depth.empty() ? rgb : depth).stem().string(); }

    std::pair<std::optional<RGBImage>, DepthImage> read(bool need_rgb) const {
        if (from_dataset()) {
            if (data.empty() || id.empty()) throw std::invalid_argument("--data and --id go together");
            auto s = load_sample(data, id);
            return {s.rgb, s.depth};
        }
        if (depth.empty()) throw std::invalid_argument("give --data/--id or --depth (and --rgb)");
        auto d = load_depth(depth);
        if (rgb.empty()) {
            if (need_rgb) throw std::invalid_argument("--rgb is required here");
            return {std::nullopt, d};
        }
        auto r = load_rgb(rgb);
        if (r.shape() != d.shape()) throw std::invalid_argument("--rgb and --depth differ in size");
        return {r, d};
    }
};

torch::Tensor resize_nearest(const torch::Tensor& grid, Shape2d out) {
    namespace F = torch::nn::functional;
    auto g = grid.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
    g = F::interpolate(g, F::InterpolateFuncOptions().size(std::vector<std::int64_t>{out.height, out.width})
                              .mode(torch::kNearest));
    return g.squeeze(0).squeeze(0).to(grid.scalar_type());
}

// --- subcommands ---------------------------------------------------------------

struct SynthCmd {
    std::string out;
    int count = 32;
    double invalid_fraction = 0.4;
    std::uint64_t seed = 0;
    std::string resolution = "96x128";
    double road_fraction = 0.35;
    int obstacles = 3;
    double noise = 0.04;
    std::vector<double> ratios{0.5, 0.25, 0.25};

    void add_to(CLI::App& cmd) {
        cmd.add_option("--out", out, "Dataset root to write")->required();
        cmd.add_option("--count", count)->check(CLI::PositiveNumber)->capture_default_str();
        cmd.add_option("--invalid-fraction", invalid_fraction, "Fraction of zero-depth pixels per sample")
            ->capture_default_str();
        cmd.add_option("--seed", seed)->capture_default_str();
        cmd.add_option("--resolution", resolution, "Sample HxW")->capture_default_str();
        cmd.add_option("--road-fraction", road_fraction)->capture_default_str();
        cmd.add_option("--obstacles", obstacles, "Negative obstacles per scene")->capture_default_str();
        cmd.add_option("--noise", noise, "Sensor noise level")->capture_default_str();
        cmd.add_option("--ratios", ratios, "train/val/test split ratios")->expected(3)->capture_default_str();
    }

    int run(const CLI::App& cmd) const {
        SynthParams p;
        p.resolution = parse_resolution(resolution);
        p.invalid_fraction = invalid_fraction;
        p.road_fraction = road_fraction;
        p.obstacle_count = obstacles;
        p.noise_level = noise;
        p.seed = seed;
        p.validate();
        const auto ids = write_synthetic_corpus(out, p, count, seed, {ratios.at(0), ratios.at(1), ratios.at(2)});
        echo_config(cmd, out);
        std::printf("wrote %d samples to %s (train %zu, val %zu, test %zu)\n", count, out.c_str(), ids.train.size(),
                    ids.val.size(), ids.test.size());
        return 0;
    }
};

struct TrainCmd {
    TrainFlags flags;
    std::string resume;

    void add_to(CLI::App& cmd) {
        flags.add_to(cmd);
        cmd.add_option("--variant", flags.variant, "Ablation row A-J or a 5-character A/+ string")
            ->capture_default_str();
        cmd.add_option("--seed", flags.seed)->capture_default_str();
        cmd.add_option("--resume", resume, "Continue from a last.ckpt");
    }

    int run(const CLI::App& cmd) const {
        const auto config = flags.config();
        const auto data = flags.load();
        apply_execution_mode(config.strict);
        AMFNet net = nullptr;
        std::optional<fs::path> resume_from;
        if (!resume.empty()) {
            // The stored depth divisor is part of the network identity.
            const auto stored = read_checkpoint_config(resume);
            auto c = config;
            c.depth_divisor = stored.depth_divisor;
            net = make_network(c, data.train);
            resume_from = resume;
        } else {
            net = make_network(config, data.train);
        }
        echo_config(cmd, flags.out);
        const auto result = train(net, data, config, flags.out, resume_from);
        for (const auto& r : result.log) std::printf("%s\n", r.to_json_line().c_str());
        std::printf("best epoch %d -> %s\n", result.best_epoch, result.best_checkpoint.string().c_str());
        return 0;
    }
};

struct EvalCmd {
    std::string checkpoint, data, split = "test", out, variant, resolution;
    double width = 0.0;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--checkpoint", checkpoint)->required();
        cmd.add_option("--data", data, "Dataset root")->required();
        cmd.add_option("--split", split)->capture_default_str();
        cmd.add_option("--out", out, "Directory for metrics.json and report.txt");
        cmd.add_option("--variant", variant, "Expected variant; must match the checkpoint");
        cmd.add_option("--width", width, "Expected width multiplier; must match the checkpoint");
        cmd.add_option("--resolution", resolution, "Expected input HxW; must match the checkpoint");
    }

    int run(const CLI::App& cmd) const {
        auto config = read_checkpoint_config(checkpoint);
        if (!variant.empty()) config.variant = AblationSpec::parse(variant);
        if (width > 0.0) config.width_multiplier = width;
        if (!resolution.empty()) config.input = parse_resolution(resolution);
        AMFNet net(config);
        load_checkpoint(checkpoint, net);

        auto samples = load_split(data, split);
        for (auto& s : samples) s = resize_sample(s, config.input);
        const auto report = compute_metrics(evaluate(net, samples));
        const auto table = format_report_table(report, config.variant.to_string());
        std::printf("%s", table.c_str());
        if (!out.empty()) {
            write_text(fs::path(out) / "report.txt", table);
            write_text(fs::path(out) / "metrics.json", report_to_json(report).dump(2) + "\n");
            echo_config(cmd, out);
        }
        return 0;
    }
};

struct AblateCmd {
    TrainFlags flags;
    std::vector<std::uint64_t> seeds{0};
    std::string rows = "ABCDEFGHIJ";

    void add_to(CLI::App& cmd) {
        flags.add_to(cmd);
        cmd.add_option("--seeds", seeds, "Training seeds")->capture_default_str();
        cmd.add_option("--rows", rows, "Subset of rows to run")->capture_default_str();
    }

    int run(const CLI::App& cmd) const {
        const auto data = flags.load();
        if (data.val.empty()) throw std::invalid_argument("ablate needs a non-empty validation split");
        echo_config(cmd, flags.out);

        nlohmann::json results = nlohmann::json::array();
        std::ostringstream table;
        table << "row  stages  amf      params";
        for (auto s : seeds) table << "  mIoU@" << s;
        table << "   mean_mIoU  mean_mAcc  mean_mF1\n";
        for (const auto& [row, spec] : ablation_rows()) {
            if (rows.find(row) == std::string::npos) continue;
            double sum_iou = 0, sum_acc = 0, sum_f1 = 0;
            std::int64_t params = 0;
            nlohmann::json per_seed = nlohmann::json::array();
            std::ostringstream cells;
            for (auto seed : seeds) {
                auto flags_seed = flags;
                flags_seed.seed = seed;
                flags_seed.variant = std::string(1, row);
                auto config = flags_seed.config();
                apply_execution_mode(config.strict);
                auto net = make_network(config, data.train);
                params = parameter_count(*net);
                const auto dir = fs::path(flags.out) / (std::string(1, row) + "_seed" + std::to_string(seed));
                const auto result = train(net, data, config, dir);
                const auto& last = result.log.back();
                sum_iou += *last.val_mIoU;
                sum_acc += *last.val_mAcc;
                sum_f1 += *last.val_mF1;
                per_seed.push_back({{"seed", seed}, {"val_mIoU", *last.val_mIoU}, {"val_mAcc", *last.val_mAcc},
                                    {"val_mF1", *last.val_mF1}});
                char buf[32];
                std::snprintf(buf, sizeof buf, "  %8.2f", *last.val_mIoU);
                cells << buf;
            }
            const double n = static_cast<double>(seeds.size());
            char head[64], tail[64];
            std::snprintf(head, sizeof head, "%c    %s   %d  %10lld", row, spec.to_string().c_str(), spec.amf_count(),
                          static_cast<long long>(params));
            std::snprintf(tail, sizeof tail, "   %9.2f  %9.2f  %8.2f\n", sum_iou / n, sum_acc / n, sum_f1 / n);
            table << head << cells.str() << tail;
            results.push_back({{"row", std::string(1, row)},
                               {"stages", spec.to_string()},
                               {"amf_count", spec.amf_count()},
                               {"parameters", params},
                               {"runs", per_seed},
                               {"mean_val_mIoU", sum_iou / n},
                               {"mean_val_mAcc", sum_acc / n},
                               {"mean_val_mF1", sum_f1 / n}});
            std::fflush(stdout);
        }
        std::printf("%s", table.str().c_str());
        write_text(fs::path(flags.out) / "ablation.txt", table.str());
        write_text(fs::path(flags.out) / "ablation.json", results.dump(2) + "\n");
        return 0;
    }
};

struct PredictCmd {
    std::string checkpoint, out;
    InputFlags input;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--checkpoint", checkpoint)->required();
        cmd.add_option("--out", out, "Output directory")->required();
        input.add_to(cmd);
    }

    int run(const CLI::App& cmd) const {
        auto net = load_network(checkpoint);
        auto [rgb, depth] = input.read(true);
        const Shape2d original = rgb->shape();
        Sample s(*rgb, depth, LabelMap(torch::zeros({original.height, original.width}, torch::kInt64)), input.name());
        const auto resized = resize_sample(s, net->config().input);
        const auto labels = predict(net, collate(std::span<const Sample>(&resized, 1)))[0];
        const auto full = resize_nearest(labels, original);
        const auto file = fs::path(out) / (input.name() + "_overlay.png");
        write_image(file, overlay_image(rgb->data(), full));
        write_image(fs::path(out) / (input.name() + "_labels.png"), mask_image(full.to(torch::kFloat32) / 2.0));
        echo_config(cmd, out);
        std::printf("%s\n", file.string().c_str());
        return 0;
    }
};

struct MaskvisCmd {
    std::string checkpoint, out;
    InputFlags input;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--checkpoint", checkpoint, "Network for the weight dump (optional)");
        cmd.add_option("--out", out, "Output directory")->required();
        input.add_to(cmd);
    }

    int run(const CLI::App& cmd) const {
        auto [rgb, depth] = input.read(!checkpoint.empty());
        const auto name = input.name();
        const fs::path dir(out);
        const auto mask = generate_mask(depth);
        write_image(dir / (name + "_mask.png"), mask_image(mask.data()));

        if (checkpoint.empty()) {
            const auto pyramid = build_pyramid(mask.data(), stage_shapes(mask.shape()));
            for (int n = 1; n <= kNumStages; ++n) {
                write_image(dir / (name + "_mask_stage" + std::to_string(n) + ".png"),
                            mask_image(pyramid.level(StageIndex(n))));
            }
        } else {
            auto net = load_network(checkpoint);
            Sample s(*rgb, depth, LabelMap(torch::zeros({rgb->shape().height, rgb->shape().width}, torch::kInt64)),
                     name);
            const auto resized = resize_sample(s, net->config().input);
            const auto batch = collate(std::span<const Sample>(&resized, 1));
            ForwardTrace trace;
            {
                torch::NoGradGuard no_grad;
                net->eval();
                net->forward(batch.rgb, batch.depth, &trace);
            }
            std::string dump;
            for (int n = 1; n <= kNumStages; ++n) {
                const auto& st = trace.stages[static_cast<std::size_t>(n - 1)];
                write_image(dir / (name + "_mask_stage" + std::to_string(n) + ".png"), mask_image(st.mask[0]));
                if (st.amf) {
                    write_image(dir / (name + "_mdepth_stage" + std::to_string(n) + ".png"),
                                mask_image(st.amf->masks.m_depth[0]));
                }
            }
            for (const auto& line : weight_dump_lines(trace)) dump += line + "\n";
            write_text(dir / (name + "_weights.txt"), dump);
            std::printf("%s", dump.c_str());
        }
        echo_config(cmd, out);
        return 0;
    }
};

}  // namespace

/// Feeds the --config file of the invoked subcommand into its options before
/// parsing. Those options keep the last value given, so flags override the file.
void preload_config(CLI::App& app, int argc, char** argv) {
    CLI::App* sub = nullptr;
    std::string file;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (!sub) {
            sub = app.get_subcommand_no_throw(arg);
        } else if (arg == "--config" && i + 1 < argc) {
            file = argv[i + 1];
        } else if (arg.rfind("--config=", 0) == 0) {
            file = arg.substr(9);
        }
    }
    if (!sub || file.empty()) return;
    for (const auto& item : CLI::ConfigINI().from_file(file)) {
        if (!item.parents.empty()) throw CLI::ConfigError("sections are not supported in " + file);
        auto* opt = sub->get_option_no_throw("--" + item.name);
        if (!opt || opt == sub->get_config_ptr()) throw CLI::ConfigError::Extras(item.name);
        std::vector<std::string> inputs;
        for (const auto& v : item.inputs) {
            std::istringstream words(v);
            for (std::string w; words >> w;) inputs.push_back(w);
        }
        if (inputs.empty()) inputs.emplace_back();
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        opt->add_result(inputs);
    }
}

int main(int argc, char** argv) {
    CLI::App app{"RGB-D road segmentation with adaptive-mask fusion"};
    app.require_subcommand(1);

    SynthCmd synth;
    TrainCmd train_cmd;
    EvalCmd eval;
    AblateCmd ablate;
    PredictCmd predict_cmd;
    MaskvisCmd maskvis;

    auto* synth_app = app.add_subcommand("synth", "Write a synthetic corpus");
    auto* train_app = app.add_subcommand("train", "Train one variant");
    auto* eval_app = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    auto* ablate_app = app.add_subcommand("ablate", "Train and evaluate ablation rows A-J");
    auto* predict_app = app.add_subcommand("predict", "Write a class-colour overlay");
    auto* maskvis_app = app.add_subcommand("maskvis", "Write validity masks and fusion weights");
    for (auto* sub : {synth_app, train_app, eval_app, ablate_app, predict_app, maskvis_app}) {
        sub->set_config("--config", "", "key=value configuration file");
    }
    synth.add_to(*synth_app);
    train_cmd.add_to(*train_app);
    eval.add_to(*eval_app);
    ablate.add_to(*ablate_app);
    predict_cmd.add_to(*predict_app);
    maskvis.add_to(*maskvis_app);

    try {
        preload_config(app, argc, argv);
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*synth_app) return synth.run(*synth_app);
        if (*train_app) return train_cmd.run(*train_app);
        if (*eval_app) return eval.run(*eval_app);
        if (*ablate_app) return ablate.run(*ablate_app);
        if (*predict_app) return predict_cmd.run(*predict_app);
        if (*maskvis_app) return maskvis.run(*maskvis_app);
    } catch (const c10::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what_without_backtrace());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
