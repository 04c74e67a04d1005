#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saltpepper/augment.hpp"
#include "saltpepper/data.hpp"
#include "saltpepper/denoiser.hpp"
#include "saltpepper/loss.hpp"
#include "saltpepper/metrics.hpp"
#include "saltpepper/schedule.hpp"

namespace saltpepper {

enum class TrainMode { diffusion, baseline };

const char* to_string(TrainMode m) noexcept;
TrainMode parse_train_mode(const std::string& s);

struct AdamWConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    explicit OptimizerState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                    const AdamWConfig& cfg);

struct TrainConfig {
    int epochs = 120;
    int batch_size = 1; // gradient accumulation over this many records per update
    AdamWConfig optimizer;
    int steps = 200; // diffusion T
    double beta_start = 1e-4;
    double beta_end = 0.02;
    LossWeights loss;
    Parameterization parameterization = Parameterization::predicts_x0;
    TrainMode mode = TrainMode::diffusion;
    double channel_dropout = 0.0005;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    int checkpoint_every = 0; // epochs; 0 keeps only the final checkpoint
    int eval_every = 0;       // epochs; 0 disables the validation report

    void validate() const;
    Schedule schedule() const;
};

/// Independent streams so that augmentation draws do not depend on the mode.
struct RngStreams {
    Rng init;
    Rng shuffle;
    Rng augment;
    Rng noise;

    explicit RngStreams(std::uint64_t seed);
};

struct StepStats {
    int t = 0;
    LossBreakdown loss;
};

/// Adds scale * d(loss)/d(params) for one record into grads. No parameter update.
StepStats accumulate_diffusion(const UNet& net, const DatasetRecord& record, const Schedule& sched,
                               const TrainConfig& cfg, Rng& aug_rng, Rng& noise_rng, std::span<double> grads,
                               double scale = 1.0);
StepStats accumulate_baseline(const UNet& net, const DatasetRecord& record, const TrainConfig& cfg, Rng& aug_rng,
                              std::span<double> grads, double scale = 1.0);

/// One augmented record, one gradient, one optimizer update.
StepStats train_step_diffusion(UNet& net, const DatasetRecord& record, const Schedule& sched, const TrainConfig& cfg,
                               OptimizerState& opt, RngStreams& rng);
StepStats train_step_baseline(UNet& net, const DatasetRecord& record, const TrainConfig& cfg, OptimizerState& opt,
                              RngStreams& rng);

/// Model channel plan adjusted to the training mode and parameterization.
UNetConfig model_for(UNetConfig base, const TrainConfig& cfg);

struct StepLog {
    int epoch = 0;
    std::int64_t step = 0;
    int t = 0;
    LossBreakdown loss;
};

/// Everything needed to continue a run exactly where it stopped.
class Trainer {
public:
    Trainer(const UNetConfig& model, const TrainConfig& cfg);

    UNet& net() noexcept { return net_; }
    const UNet& net() const noexcept { return net_; }
    const TrainConfig& config() const noexcept { return cfg_; }
    const OptimizerState& optimizer() const noexcept { return opt_; }
    int epoch() const noexcept { return epoch_; }
    std::int64_t global_step() const noexcept { return opt_.step; }

    /// One update from a batch of records (gradients averaged).
    StepLog step(std::span<const DatasetRecord* const> batch);

    /// Shuffles the training split and runs one epoch of updates.
    std::vector<StepLog> run_epoch(const std::vector<DatasetRecord>& train,
                                   const std::function<void(const StepLog&)>& on_step = {});

    /// Loss on fixed records with a fixed timestep and noise; no augmentation, no update.
    LossBreakdown probe_loss(const std::vector<DatasetRecord>& records) const;

    // "SPTS": f64 parameters, optimizer moments, counters and generator states.
    void save_state(const std::filesystem::path& path) const;
    static Trainer load_state(const std::filesystem::path& path, const TrainConfig& cfg);

private:
    Trainer(UNet net, const TrainConfig& cfg);

    TrainConfig cfg_;
    Schedule sched_;
    UNet net_;
    OptimizerState opt_;
    RngStreams rng_;
    int epoch_ = 0;
};

struct InferenceOptions {
    BlurConfig blur;
    bool single_step = false;
    std::uint64_t seed = 0;
};

struct Localization {
    LandmarkSet landmarks;
    HeatmapStack x0;          // final heatmap state (network output for the baseline)
    HeatmapStack probability; // spatial softmax of x0
};

/// Per-record generator: seeded from (seed, index) so records are independent of order.
Rng record_rng(std::uint64_t seed, std::size_t index);

Localization localize(const UNet& net, const TrainMode mode, const ReferenceImage& image, Frame frame, Spacing spacing,
                      const Schedule& sched, const InferenceOptions& opts, Rng& rng);

/// Predicted landmark sets for every record, in order.
std::vector<LandmarkSet> predict_split(const UNet& net, TrainMode mode, const std::vector<DatasetRecord>& records,
                                       const Schedule& sched, const InferenceOptions& opts);

EvalReport evaluate_split(const UNet& net, TrainMode mode, const std::vector<DatasetRecord>& records,
                          const Schedule& sched, const InferenceOptions& opts, const MetricsConfig& metrics = {});

struct FitOptions {
    std::filesystem::path out_dir; // empty: nothing is written
    std::optional<std::filesystem::path> resume_from;
    InferenceOptions inference;
    std::function<void(const StepLog&)> on_step;
    std::function<void(int epoch, const LossBreakdown& probe)> on_epoch;
};

struct FitResult {
    UNet net;
    std::vector<StepLog> log;
    std::vector<EvalReport> validation_reports;
};

/// Writes checkpoint.spck, train_state.spts, loss_log.csv and (when enabled)
/// validation_epoch<k>.json under out_dir.
FitResult fit(const std::vector<DatasetRecord>& train, const std::vector<DatasetRecord>& validation,
              const UNetConfig& model, const TrainConfig& cfg, const FitOptions& opts = {});

} // namespace saltpepper
