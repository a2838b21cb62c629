#include "amfnet/network.hpp"

#include "amfnet/layers.hpp"

#include <cinttypes>
#include <cstdio>
#include <map>
#include <sstream>

namespace amfnet {

namespace nn = torch::nn;

// --- ablation spec --------------------------------------------------------------

AblationSpec AblationSpec::from_string(std::string_view s) {
    if (s.size() != kNumStages) throw std::invalid_argument("ablation spec must have 5 characters, got '" + std::string(s) + "'");
    std::array<bool, kNumStages> amf{};
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '+') {
            amf[i] = true;
        } else if (s[i] != 'A') {
            throw std::invalid_argument("ablation spec characters must be 'A' or '+', got '" + std::string(s) + "'");
        }
    }
    return AblationSpec(amf);
}

const std::vector<std::pair<char, AblationSpec>>& ablation_rows() {
    static const std::vector<std::pair<char, AblationSpec>> rows = {
        {'A', AblationSpec::from_string("AAAAA")}, {'B', AblationSpec::from_string("AAAA+")},
        {'C', AblationSpec::from_string("AAA+A")}, {'D', AblationSpec::from_string("AA+AA")},
        {'E', AblationSpec::from_string("A+AAA")}, {'F', AblationSpec::from_string("+AAAA")},
        {'G', AblationSpec::from_string("AAA++")}, {'H', AblationSpec::from_string("AA+++")},
        {'I', AblationSpec::from_string("A++++")}, {'J', AblationSpec::from_string("+++++")},
    };
    return rows;
}

AblationSpec AblationSpec::from_row(char row) {
    for (const auto& [letter, spec] : ablation_rows()) {
        if (letter == row) return spec;
    }
    throw std::invalid_argument(std::string("unknown ablation row '") + row + "' (expected A..J)");
}

AblationSpec AblationSpec::parse(std::string_view text) {
    if (text.size() == 1) return from_row(text[0]);
    return from_string(text);
}

int AblationSpec::amf_count() const {
    int n = 0;
    for (bool b : amf_) n += b ? 1 : 0;
    return n;
}

std::string AblationSpec::to_string() const {
    std::string s;
    for (bool b : amf_) s += b ? '+' : 'A';
    return s;
}

std::optional<char> AblationSpec::row() const {
    for (const auto& [letter, spec] : ablation_rows()) {
        if (spec == *this) return letter;
    }
    return std::nullopt;
}

// --- config ---------------------------------------------------------------------

EncoderConfig NetworkConfig::encoder(std::int64_t in_channels) const {
    auto c = full_depth ? EncoderConfig::full(in_channels) : EncoderConfig::desk(in_channels);
    c.width_multiplier = width_multiplier;
    c.use_mhsa_stage5 = use_mhsa_stage5;
    c.mhsa_heads = mhsa_heads;
    c.max_input = input;
    return c;
}

void NetworkConfig::validate() const {
    stage_shapes(input);
    encoder(3).validate();
    if (reduction_ratio <= 0) throw std::invalid_argument("reduction_ratio must be positive");
    if (spatial_kernel <= 0 || spatial_kernel % 2 == 0) throw std::invalid_argument("spatial_kernel must be odd");
    if (!(depth_divisor > 0.0)) throw std::invalid_argument("depth_divisor must be positive");
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string NetworkConfig::canonical() const {
    std::ostringstream s;
    s << "input=" << input.height << "x" << input.width << "\n"
      << "width_multiplier=" << fmt_double(width_multiplier) << "\n"
      << "full_depth=" << (full_depth ? 1 : 0) << "\n"
      << "use_mhsa_stage5=" << (use_mhsa_stage5 ? 1 : 0) << "\n"
      << "mhsa_heads=" << mhsa_heads << "\n"
      << "reduction_ratio=" << reduction_ratio << "\n"
      << "spatial_kernel=" << spatial_kernel << "\n"
      << "depth_divisor=" << fmt_double(depth_divisor) << "\n"
      << "variant=" << variant.to_string() << "\n";
    return s.str();
}

NetworkConfig NetworkConfig::from_canonical(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::invalid_argument("network config: missing key '" + key + "'");
        return it->second;
    };
    NetworkConfig c;
    const auto res = get("input");
    const auto x = res.find('x');
    if (x == std::string::npos) throw std::invalid_argument("network config: bad input '" + res + "'");
    c.input = {std::stoll(res.substr(0, x)), std::stoll(res.substr(x + 1))};
    c.width_multiplier = std::stod(get("width_multiplier"));
    c.full_depth = get("full_depth") == "1";
    c.use_mhsa_stage5 = get("use_mhsa_stage5") == "1";
    c.mhsa_heads = std::stoll(get("mhsa_heads"));
    c.reduction_ratio = std::stoll(get("reduction_ratio"));
    c.spatial_kernel = std::stoll(get("spatial_kernel"));
    c.depth_divisor = std::stod(get("depth_divisor"));
    c.variant = AblationSpec::from_string(get("variant"));
    return c;
}

std::string NetworkConfig::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

// --- network --------------------------------------------------------------------

AMFNetImpl::AMFNetImpl(NetworkConfig config) : config_(std::move(config)) {
    config_.validate();
    rgb_encoder_ = register_module("rgb_encoder", Encoder(config_.encoder(3)));
    depth_encoder_ = register_module("depth_encoder", Encoder(config_.encoder(1)));
    const auto ch = rgb_encoder_->config().channels();
    const AMFOptions amf_options{config_.reduction_ratio, config_.spatial_kernel};
    for (int i = 0; i < kNumStages; ++i) {
        if (config_.variant.has_amf(StageIndex(i + 1))) {
            amf_[i] = register_module("amf" + std::to_string(i + 1), AMF(ch[i], amf_options));
        }
    }
    decoder_ = register_module("decoder", Decoder(ch, config_.reduction_ratio));
    head_ = register_module("head", he_conv2d(nn::Conv2dOptions(decoder_->out_channels(), kNumClasses, 1)));
}

torch::Tensor AMFNetImpl::fuse(StageIndex n, const torch::Tensor& rgb, const torch::Tensor& depth,
                               const torch::Tensor& mask, StageTrace* trace) {
    torch::Tensor out;
    if (auto& amf = amf_[n.offset()]) {
        auto t = amf->forward_traced(rgb, depth, mask);
        out = t.output;
        if (trace) {
            trace->fused = t.fused;
            trace->amf = std::move(t);
        }
    } else {
        require_same_shape(rgb, depth, "stage " + std::to_string(n.value()) + " fusion");
        out = rgb + depth;
        if (trace) trace->fused = out;
    }
    if (trace) {
        trace->rgb = rgb;
        trace->depth = depth;
        trace->mask = mask;
        trace->output = out;
    }
    return out;
}

torch::Tensor AMFNetImpl::forward(const torch::Tensor& rgb, const torch::Tensor& depth, ForwardTrace* trace) {
    if (rgb.dim() != 4 || rgb.size(1) != 3) throw std::invalid_argument("amfnet: rgb must be (N,3,H,W)");
    if (depth.dim() != 4 || depth.size(1) != 1 || depth.size(0) != rgb.size(0) || depth.size(2) != rgb.size(2) ||
        depth.size(3) != rgb.size(3)) {
        std::ostringstream msg;
        msg << "amfnet: depth " << depth.sizes() << " is not aligned with rgb " << rgb.sizes();
        throw std::invalid_argument(msg.str());
    }
    const auto shapes = stage_shapes({rgb.size(2), rgb.size(3)});
    const auto pyramid = build_pyramid(generate_mask(depth), shapes);
    const auto depth_out = depth_encoder_->forward(normalize_depth(depth, config_.depth_divisor));

    std::array<torch::Tensor, kNumStages> fused;
    rgb_encoder_->forward(rgb, [&](StageIndex n, const torch::Tensor& raw) {
        StageTrace* st = trace ? &trace->stages[n.offset()] : nullptr;
        fused[n.offset()] = fuse(n, raw, depth_out.stage(n), pyramid.level(n), st);
        return fused[n.offset()];
    });
    return head_(decoder_(fused));
}

AMFNet build_variant(const AblationSpec& spec, NetworkConfig config) {
    config.variant = spec;
    return AMFNet(std::move(config));
}

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                                const std::array<double, kNumClasses>& class_weights) {
    if (logits.dim() != 4 || logits.size(1) != kNumClasses) throw std::invalid_argument("loss: logits must be (N,3,H,W)");
    if (labels.dim() != 3 || labels.size(0) != logits.size(0) || labels.size(1) != logits.size(2) ||
        labels.size(2) != logits.size(3)) {
        std::ostringstream msg;
        msg << "loss: labels " << labels.sizes() << " do not match logits " << logits.sizes();
        throw std::invalid_argument(msg.str());
    }
    require_labels(labels, "loss");
    auto target = labels.to(torch::kInt64).unsqueeze(1);
    auto nll = -torch::log_softmax(logits, 1).gather(1, target).squeeze(1);
    auto w = torch::tensor({class_weights[0], class_weights[1], class_weights[2]}, logits.options());
    return (nll * w.index_select(0, labels.reshape({-1}).to(torch::kInt64)).view_as(nll)).mean();
}

}  // namespace amfnet
