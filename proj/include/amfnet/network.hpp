#pragma once

// Two-encoder, one-decoder fusion network and its ablation variants.

#include "amfnet/amf.hpp"
#include "amfnet/backbone.hpp"
#include "amfnet/decoder.hpp"
#include "amfnet/maskgen.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace amfnet {

/// Which encoder stages fuse through an AMF module; the others fuse by
/// element-wise addition. Serialised as 5 chars over {A,+}, stage 1 first,
/// '+' meaning AMF present (e.g. "AAA++").
class AblationSpec {
public:
    AblationSpec() = default;
    explicit AblationSpec(std::array<bool, kNumStages> amf_at_stage) : amf_(amf_at_stage) {}

    /// Accepts a 5-char {A,+} string or an ablation row letter A..J.
    static AblationSpec parse(std::string_view text);
    static AblationSpec from_string(std::string_view five_chars);
    static AblationSpec from_row(char row);

    bool has_amf(StageIndex n) const { return amf_[n.offset()]; }
    int amf_count() const;
    const std::array<bool, kNumStages>& stages() const { return amf_; }
    std::string to_string() const;
    /// Row letter if this spec is one of the ten ablation rows.
    std::optional<char> row() const;

    friend bool operator==(const AblationSpec&, const AblationSpec&) = default;

private:
    std::array<bool, kNumStages> amf_{};
};

/// The ten ablation rows (A: no AMF ... J: AMF behind every stage).
const std::vector<std::pair<char, AblationSpec>>& ablation_rows();

struct NetworkConfig {
    Shape2d input{96, 128};
    double width_multiplier = 0.125;
    bool full_depth = false;  // BotNet-50 group depths (3,4,6,3) instead of (1,1,1,1)
    bool use_mhsa_stage5 = true;
    std::int64_t mhsa_heads = 4;
    std::int64_t reduction_ratio = 16;
    std::int64_t spatial_kernel = 7;
    double depth_divisor = 10000.0;
    AblationSpec variant = AblationSpec::from_row('J');

    EncoderConfig encoder(std::int64_t in_channels) const;
    void validate() const;

    /// key=value lines, one per field, fixed order.
    std::string canonical() const;
    static NetworkConfig from_canonical(const std::string& text);
    /// 16 hex digits (FNV-1a 64 of canonical()).
    std::string fingerprint() const;
};

/// Per-stage intermediates of one forward pass.
struct StageTrace {
    torch::Tensor rgb;    // raw RGB encoder stage output
    torch::Tensor depth;  // raw depth encoder stage output
    torch::Tensor mask;   // binary mask at this stage's resolution
    torch::Tensor fused;  // pre-attention fusion (plain sum when no AMF)
    torch::Tensor output; // what feeds the next stage and the decoder skip
    std::optional<AMFTrace> amf;
};

struct ForwardTrace {
    std::array<StageTrace, kNumStages> stages;
};

class AMFNetImpl : public torch::nn::Module {
public:
    explicit AMFNetImpl(NetworkConfig config);

    /// rgb (N,3,H,W) in [0,1]; depth (N,1,H,W) raw sensor readings. Returns
    /// (N,3,H,W) class logits.
    torch::Tensor forward(const torch::Tensor& rgb, const torch::Tensor& depth, ForwardTrace* trace = nullptr);

    /// Fuses one stage's encoder outputs per the ablation spec.
    torch::Tensor fuse(StageIndex n, const torch::Tensor& rgb, const torch::Tensor& depth, const torch::Tensor& mask,
                       StageTrace* trace = nullptr);

    const NetworkConfig& config() const { return config_; }
    Encoder& rgb_encoder() { return rgb_encoder_; }
    Encoder& depth_encoder() { return depth_encoder_; }
    Decoder& decoder() { return decoder_; }
    torch::nn::Conv2d& head() { return head_; }
    /// Null when the stage fuses by addition.
    AMF& amf(StageIndex n) { return amf_[n.offset()]; }

private:
    NetworkConfig config_;
    Encoder rgb_encoder_{nullptr};
    Encoder depth_encoder_{nullptr};
    std::array<AMF, kNumStages> amf_{nullptr, nullptr, nullptr, nullptr, nullptr};
    Decoder decoder_{nullptr};
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(AMFNet);

/// Network whose stage fusion wiring follows `spec`; `config.variant` is
/// overridden.
AMFNet build_variant(const AblationSpec& spec, NetworkConfig config);

/// Mean over pixels of -w[y] * log softmax(logits)[y]. logits (N,3,H,W),
/// labels (N,H,W) int64.
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                                const std::array<double, kNumClasses>& class_weights = {1.0, 1.0, 1.0});

}  // namespace amfnet
