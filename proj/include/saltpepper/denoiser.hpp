#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "saltpepper/forward.hpp"
#include "saltpepper/heatmap.hpp"
#include "saltpepper/schedule.hpp"
#include "saltpepper/tensor.hpp"

namespace saltpepper {

enum class Parameterization { predicts_x0, predicts_eps };

const char* to_string(Parameterization p) noexcept;
Parameterization parse_parameterization(const std::string& s);

/// Anything that maps (y, x_t, t) to a heatmap prediction. The sampler only
/// depends on this interface, so oracle denoisers can stand in for the network.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Parameterization parameterization() const = 0;
    virtual int heatmap_channels() const = 0;
    virtual HeatmapStack predict(const ReferenceImage& y, const HeatmapStack& x_t, int t) const = 0;
};

/// entry 2k = sin(t / 10000^(2k/dim)), entry 2k+1 = cos(t / 10000^(2k/dim))
std::vector<double> sinusoidal_time_embedding(int t, int dim);

struct UNetConfig {
    int image_channels = 1;
    int landmarks = 4;
    // When false the network sees the reference image only (no-diffusion baseline).
    bool heatmap_input = true;
    std::vector<int> encoder{8, 16, 32};
    // Either encoder.size() - 1 entries (one per upsampling stage) or
    // encoder.size() entries, in which case the first runs at the bottom resolution.
    std::vector<int> decoder{16, 8};
    int groups = 4;
    int time_dim = 16;
    Parameterization parameterization = Parameterization::predicts_x0;

    int input_channels() const noexcept { return image_channels + (heatmap_input ? landmarks : 0); }
    int levels() const noexcept { return static_cast<int>(encoder.size()); }
    void validate() const;

    /// Full-scale channel plan (6 encoder / 6 decoder stages). Attention blocks are not part of this network.
    static UNetConfig full_scale_preset(int image_channels, int landmarks);
};

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

namespace detail {
struct TapeData;
}

/// Activations recorded by a forward pass, consumed by backward().
class Tape {
public:
    Tape();
    ~Tape();
    Tape(Tape&&) noexcept;
    Tape& operator=(Tape&&) noexcept;

    bool recorded() const noexcept;
    void clear() noexcept;

private:
    friend class UNet;
    std::unique_ptr<detail::TapeData> data_;
};

/// Small time-conditioned encoder-decoder with skip connections.
///
/// Each stage is conv3x3 -> GroupNorm -> SiLU -> (+ time projection) -> conv3x3 -> SiLU.
/// Stages are joined by 2x average pooling and nearest-neighbour upsampling, and a
/// 1x1 head maps to one channel per landmark (Tanh when predicting x0).
class UNet final : public Denoiser {
public:
    explicit UNet(UNetConfig cfg);

    const UNetConfig& config() const noexcept { return cfg_; }
    Parameterization parameterization() const override { return cfg_.parameterization; }
    int heatmap_channels() const override { return cfg_.landmarks; }

    std::span<double> parameters() noexcept { return params_; }
    std::span<const double> parameters() const noexcept { return params_; }
    const std::vector<ParamSpec>& manifest() const noexcept { return manifest_; }

    /// Conv and time-projection weights uniform in +-sqrt(1/fan_in); biases 0; norm scale 1.
    void initialize(Rng& rng);

    Tensor forward(const Tensor& input, int t, Tape* tape = nullptr) const;

    /// Exact parameter gradient of <grad_out, forward(input, t)> for the recorded pass.
    std::vector<double> backward(const Tape& tape, const Tensor& grad_out) const;
    void backward_accumulate(const Tape& tape, const Tensor& grad_out, std::span<double> grads) const;

    HeatmapStack predict(const ReferenceImage& y, const HeatmapStack& x_t, int t) const override;

    struct Stage {
        int in_channels = 0;
        int out_channels = 0;
        std::size_t conv1_w = 0, conv1_b = 0;
        std::size_t norm_w = 0, norm_b = 0;
        std::size_t time_w = 0, time_b = 0;
        std::size_t conv2_w = 0, conv2_b = 0;
    };

private:
    std::size_t add_param(const std::string& name, std::vector<int> shape);
    Stage add_stage(const std::string& prefix, int in_ch, int out_ch);

    UNetConfig cfg_;
    std::vector<ParamSpec> manifest_;
    std::vector<double> params_;
    std::vector<Stage> encoder_;
    std::vector<Stage> decoder_;
    bool bottom_decoder_ = false;
    std::size_t head_w_ = 0, head_b_ = 0;
};

/// x0 = (x_t - eps * sqrt(1 - alpha_bar_t)) / sqrt(alpha_bar_t)
Tensor eps_to_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& sched);
/// eps = (x_t - x0 * sqrt(alpha_bar_t)) / sqrt(1 - alpha_bar_t)
Tensor x0_to_eps(const Tensor& x_t, const Tensor& x0_hat, int t, const Schedule& sched);

/// key=value lines, as stored in checkpoints.
std::string encode_model_config(const UNetConfig& c);
UNetConfig decode_model_config(const std::string& text);

// "SPCK" checkpoint: magic, version, config block, named-shape manifest, f32 values.
void write_checkpoint(const std::filesystem::path& path, const UNet& net);
UNet read_checkpoint(const std::filesystem::path& path);

} // namespace saltpepper
