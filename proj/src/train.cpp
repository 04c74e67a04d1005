#include "saltpepper/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "saltpepper/error.hpp"
#include "saltpepper/forward.hpp"
#include "saltpepper/sampler.hpp"

namespace saltpepper {

namespace fs = std::filesystem;

const char* to_string(TrainMode m) noexcept { return m == TrainMode::diffusion ? "diffusion" : "baseline"; }

TrainMode parse_train_mode(const std::string& s) {
    if (s == "diffusion") return TrainMode::diffusion;
    if (s == "baseline") return TrainMode::baseline;
    fail(Errc::config, "unknown mode '" + s + "' (expected diffusion or baseline)");
}

void AdamWConfig::validate() const {
    if (!(learning_rate > 0.0)) fail(Errc::invalid_range, "learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) fail(Errc::invalid_range, "weight_decay must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) fail(Errc::invalid_range, "beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) fail(Errc::invalid_range, "beta2 must lie in (0, 1)");
    if (!(epsilon > 0.0)) fail(Errc::invalid_range, "epsilon_opt must be > 0");
}

void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& s,
                    const AdamWConfig& cfg) {
    if (grads.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
        fail(Errc::shape_mismatch, "optimizer state, gradients and parameters differ in length");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) fail(Errc::non_finite, "non-finite gradient");
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * grads[i];
        s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double m_hat = s.m[i] / c1;
        const double v_hat = s.v[i] / c2;
        params[i] -= cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) + cfg.weight_decay * params[i]);
    }
}

void TrainConfig::validate() const {
    if (epochs < 0) fail(Errc::invalid_range, "epochs must be >= 0");
    if (batch_size < 1) fail(Errc::invalid_range, "batch_size must be >= 1");
    optimizer.validate();
    loss.validate();
    augment.validate();
    if (!(channel_dropout >= 0.0 && channel_dropout <= 1.0)) {
        fail(Errc::invalid_range, "channel_dropout must lie in [0, 1]");
    }
    if (checkpoint_every < 0 || eval_every < 0) fail(Errc::invalid_range, "checkpoint/eval intervals must be >= 0");
    (void)schedule();
}

Schedule TrainConfig::schedule() const { return make_linear_schedule(steps, beta_start, beta_end); }

namespace {

Rng seeded(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    return Rng(seq);
}

AugmentedSample augmented(const DatasetRecord& r, const TrainConfig& cfg, Rng& aug_rng) {
    if (!cfg.augment.enabled) return {r.image, r.ground_truth, 1};
    return augment(r.image, r.ground_truth, cfg.augment, aug_rng);
}

void scale_into(Tensor& grad, double scale) {
    if (scale != 1.0) {
        for (auto& g : grad.data) g *= scale;
    }
}

} // namespace

RngStreams::RngStreams(std::uint64_t seed)
    : init(seeded(seed, 0)), shuffle(seeded(seed, 1)), augment(seeded(seed, 2)), noise(seeded(seed, 3)) {}

StepStats accumulate_diffusion(const UNet& net, const DatasetRecord& record, const Schedule& sched,
                               const TrainConfig& cfg, Rng& aug_rng, Rng& noise_rng, std::span<double> grads,
                               double scale) {
    const auto s = augmented(record, cfg, aug_rng);
    const int h = s.image.height(), w = s.image.width();
    HeatmapStack x0 = to_diffusion_scale(encode_landmarks(s.landmarks, h, w));
    x0 = channel_dropout(x0, cfg.channel_dropout, noise_rng);

    StepStats st;
    st.t = std::uniform_int_distribution<int>(1, sched.steps())(noise_rng);
    const NoiseDraw eps = draw_noise(x0.channels(), h, w, noise_rng);
    const HeatmapStack x_t = q_sample(x0, st.t, eps, sched);

    Tape tape;
    const Tensor out = net.forward(concat_condition(s.image, x_t), st.t, &tape);
    Tensor grad(out.channels, out.height, out.width);
    if (net.parameterization() == Parameterization::predicts_x0) {
        st.loss = loss_combined(x0, out, cfg.loss, &grad);
    } else {
        st.loss.loss_s = loss_simple_with_grad(eps, out, grad);
        st.loss.total = st.loss.loss_s;
    }
    scale_into(grad, scale);
    net.backward_accumulate(tape, grad, grads);
    return st;
}

StepStats accumulate_baseline(const UNet& net, const DatasetRecord& record, const TrainConfig& cfg, Rng& aug_rng,
                              std::span<double> grads, double scale) {
    const auto s = augmented(record, cfg, aug_rng);
    const HeatmapStack target = encode_landmarks(s.landmarks, s.image.height(), s.image.width());

    Tape tape;
    const Tensor out = net.forward(s.image.pixels, 0, &tape);
    Tensor grad(out.channels, out.height, out.width);
    StepStats st;
    st.loss.loss_nll = loss_nll_with_grad(target, out, cfg.loss.epsilon_floor, cfg.loss.reduction, scale, grad);
    st.loss.total = st.loss.loss_nll;
    net.backward_accumulate(tape, grad, grads);
    return st;
}

StepStats train_step_diffusion(UNet& net, const DatasetRecord& record, const Schedule& sched, const TrainConfig& cfg,
                               OptimizerState& opt, RngStreams& rng) {
    std::vector<double> grads(net.parameters().size(), 0.0);
    const auto st = accumulate_diffusion(net, record, sched, cfg, rng.augment, rng.noise, grads);
    optimizer_step(net.parameters(), grads, opt, cfg.optimizer);
    return st;
}

StepStats train_step_baseline(UNet& net, const DatasetRecord& record, const TrainConfig& cfg, OptimizerState& opt,
                              RngStreams& rng) {
    std::vector<double> grads(net.parameters().size(), 0.0);
    const auto st = accumulate_baseline(net, record, cfg, rng.augment, grads);
    optimizer_step(net.parameters(), grads, opt, cfg.optimizer);
    return st;
}

UNetConfig model_for(UNetConfig base, const TrainConfig& cfg) {
    base.heatmap_input = cfg.mode == TrainMode::diffusion;
    base.parameterization = cfg.mode == TrainMode::diffusion ? cfg.parameterization : Parameterization::predicts_x0;
    return base;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const UNetConfig& model, const TrainConfig& cfg)
    : cfg_((cfg.validate(), cfg)), sched_(cfg.schedule()), net_(model_for(model, cfg)),
      opt_(net_.parameters().size()), rng_(cfg.seed) {
    if (cfg.mode == TrainMode::baseline && cfg.parameterization != Parameterization::predicts_x0) {
        fail(Errc::config, "the baseline is trained with the NLL loss and needs parameterization = x0");
    }
    net_.initialize(rng_.init);
}

Trainer::Trainer(UNet net, const TrainConfig& cfg)
    : cfg_((cfg.validate(), cfg)), sched_(cfg.schedule()), net_(std::move(net)), opt_(net_.parameters().size()),
      rng_(cfg.seed) {}

StepLog Trainer::step(std::span<const DatasetRecord* const> batch) {
    if (batch.empty()) fail(Errc::empty_stack, "empty training batch");
    std::vector<double> grads(net_.parameters().size(), 0.0);
    const double scale = 1.0 / static_cast<double>(batch.size());
    StepLog log;
    log.epoch = epoch_;
    for (const DatasetRecord* r : batch) {
        const auto st = cfg_.mode == TrainMode::diffusion
                            ? accumulate_diffusion(net_, *r, sched_, cfg_, rng_.augment, rng_.noise, grads, scale)
                            : accumulate_baseline(net_, *r, cfg_, rng_.augment, grads, scale);
        if (r == batch.front()) log.t = st.t;
        log.loss.loss_s += st.loss.loss_s * scale;
        log.loss.loss_nll += st.loss.loss_nll * scale;
        log.loss.total += st.loss.total * scale;
    }
    optimizer_step(net_.parameters(), grads, opt_, cfg_.optimizer);
    log.step = opt_.step;
    return log;
}

std::vector<StepLog> Trainer::run_epoch(const std::vector<DatasetRecord>& train,
                                        const std::function<void(const StepLog&)>& on_step) {
    if (train.empty()) fail(Errc::empty_stack, "training split is empty");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_.shuffle);

    std::vector<StepLog> logs;
    std::vector<const DatasetRecord*> batch;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg_.batch_size)) {
        batch.clear();
        for (std::size_t j = i; j < std::min(order.size(), i + cfg_.batch_size); ++j) batch.push_back(&train[order[j]]);
        logs.push_back(step(batch));
        if (on_step) on_step(logs.back());
    }
    ++epoch_;
    return logs;
}

LossBreakdown Trainer::probe_loss(const std::vector<DatasetRecord>& records) const {
    LossBreakdown sum;
    const std::size_t n = std::min<std::size_t>(records.size(), 4);
    if (n == 0) return sum;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = records[i];
        LossBreakdown b;
        if (cfg_.mode == TrainMode::baseline) {
            const HeatmapStack target = encode_landmarks(r.ground_truth, r.image.height(), r.image.width());
            b.loss_nll = loss_nll(target, {net_.forward(r.image.pixels, 0), ScaleTag::raw}, cfg_.loss.epsilon_floor,
                                  cfg_.loss.reduction);
            b.total = b.loss_nll;
        } else {
            Rng rng = seeded(0x5eed, static_cast<std::uint32_t>(i));
            const int t = std::max(1, sched_.steps() / 2);
            const HeatmapStack x0 = to_diffusion_scale(encode_landmarks(r.ground_truth, r.image.height(), r.image.width()));
            const NoiseDraw eps = draw_noise(x0.channels(), x0.height(), x0.width(), rng);
            const Tensor out = net_.forward(concat_condition(r.image, q_sample(x0, t, eps, sched_)), t);
            if (net_.parameterization() == Parameterization::predicts_x0) {
                b = loss_combined(x0, out, cfg_.loss);
            } else {
                b.loss_s = loss_simple(eps, out);
                b.total = b.loss_s;
            }
        }
        sum.loss_s += b.loss_s / n;
        sum.loss_nll += b.loss_nll / n;
        sum.total += b.total / n;
    }
    return sum;
}

namespace {

void put_doubles(std::ostream& os, std::span<const double> v) {
    detail::put_u64(os, v.size());
    for (double d : v) detail::put_f64(os, d);
}

void get_doubles(std::istream& is, std::span<double> v) {
    if (detail::get_u64(is) != v.size()) fail(Errc::checkpoint_mismatch, "training state size differs from model");
    for (auto& d : v) d = detail::get_f64(is);
}

std::string rng_text(const Rng& r) {
    std::ostringstream os;
    os << r;
    return os.str();
}

void rng_from_text(Rng& r, const std::string& s) {
    std::istringstream is(s);
    is >> r;
    if (!is) fail(Errc::checkpoint_mismatch, "corrupt generator state in training state");
}

} // namespace

void Trainer::save_state(const fs::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    os.write("SPTS", 4);
    detail::put_u32(os, 1);
    detail::put_string(os, encode_model_config(net_.config()));
    put_doubles(os, net_.parameters());
    put_doubles(os, opt_.m);
    put_doubles(os, opt_.v);
    detail::put_u64(os, static_cast<std::uint64_t>(opt_.step));
    detail::put_u32(os, static_cast<std::uint32_t>(epoch_));
    for (const Rng* r : {&rng_.init, &rng_.shuffle, &rng_.augment, &rng_.noise}) detail::put_string(os, rng_text(*r));
    if (!os) fail(Errc::io, "failed writing training state " + path.string());
}

Trainer Trainer::load_state(const fs::path& path, const TrainConfig& cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(Errc::missing_file, "cannot open training state " + path.string());
    detail::expect_magic(is, "SPTS");
    if (detail::get_u32(is) != 1) fail(Errc::checkpoint_mismatch, "unsupported training state version");
    UNet net(decode_model_config(detail::get_string(is)));
    if (net.config().heatmap_input != (cfg.mode == TrainMode::diffusion)) {
        fail(Errc::checkpoint_mismatch, "training state was written for a different mode");
    }
    Trainer tr(std::move(net), cfg);
    get_doubles(is, tr.net_.parameters());
    get_doubles(is, tr.opt_.m);
    get_doubles(is, tr.opt_.v);
    tr.opt_.step = static_cast<std::int64_t>(detail::get_u64(is));
    tr.epoch_ = static_cast<int>(detail::get_u32(is));
    for (Rng* r : {&tr.rng_.init, &tr.rng_.shuffle, &tr.rng_.augment, &tr.rng_.noise}) {
        rng_from_text(*r, detail::get_string(is));
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Inference

Rng record_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

Localization localize(const UNet& net, TrainMode mode, const ReferenceImage& image, Frame frame, Spacing spacing,
                      const Schedule& sched, const InferenceOptions& opts, Rng& rng) {
    Localization out;
    if (mode == TrainMode::baseline) {
        out.x0 = {net.forward(image.pixels, 0), ScaleTag::raw};
    } else if (opts.single_step) {
        out.x0 = sample_singlestep(net, image, sched, opts.blur, rng);
    } else {
        out.x0 = sample_multistep(net, image, sched, opts.blur, rng).x0;
    }
    out.probability = spatial_softmax(out.x0);
    out.landmarks = extract_landmarks(out.x0, frame, spacing);
    return out;
}

std::vector<LandmarkSet> predict_split(const UNet& net, TrainMode mode, const std::vector<DatasetRecord>& records,
                                       const Schedule& sched, const InferenceOptions& opts) {
    std::vector<LandmarkSet> preds;
    preds.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Rng rng = record_rng(opts.seed, i);
        const auto& gt = records[i].ground_truth;
        preds.push_back(localize(net, mode, records[i].image, gt.frame, gt.spacing_mm, sched, opts, rng).landmarks);
    }
    return preds;
}

EvalReport evaluate_split(const UNet& net, TrainMode mode, const std::vector<DatasetRecord>& records,
                          const Schedule& sched, const InferenceOptions& opts, const MetricsConfig& metrics) {
    std::vector<LandmarkSet> gts;
    for (const auto& r : records) gts.push_back(r.ground_truth);
    return evaluate(predict_split(net, mode, records, sched, opts), gts, metrics);
}

// ---------------------------------------------------------------------------
// fit

namespace {

void write_log_row(std::ostream& os, const StepLog& l) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%lld,%d,%.9g,%.9g,%.9g\n", l.epoch, static_cast<long long>(l.step), l.t,
                  l.loss.loss_s, l.loss.loss_nll, l.loss.total);
    os << buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    os << text;
    if (!os) fail(Errc::io, "failed writing " + path.string());
}

} // namespace

FitResult fit(const std::vector<DatasetRecord>& train, const std::vector<DatasetRecord>& validation,
              const UNetConfig& model, const TrainConfig& cfg, const FitOptions& opts) {
    cfg.validate();
    if (train.empty() && cfg.epochs > 0) fail(Errc::empty_stack, "training split is empty");
    Trainer trainer = opts.resume_from ? Trainer::load_state(*opts.resume_from, cfg) : Trainer(model, cfg);

    const bool files = !opts.out_dir.empty();
    std::ofstream log_file;
    if (files) {
        std::error_code ec;
        fs::create_directories(opts.out_dir, ec);
        if (ec) fail(Errc::io, "cannot create " + opts.out_dir.string() + ": " + ec.message());
        const auto log_path = opts.out_dir / "loss_log.csv";
        const bool append = opts.resume_from.has_value() && fs::exists(log_path);
        log_file.open(log_path, append ? std::ios::app : std::ios::trunc);
        if (!log_file) fail(Errc::io, "cannot open " + log_path.string() + " for writing");
        if (!append) log_file << "epoch,step,t,loss_s,loss_nll,total\n";
    }

    FitResult result{trainer.net(), {}, {}};
    const auto& probe_set = validation.empty() ? train : validation;
    while (trainer.epoch() < cfg.epochs) {
        auto logs = trainer.run_epoch(train, [&](const StepLog& l) {
            if (files) write_log_row(log_file, l);
            if (opts.on_step) opts.on_step(l);
        });
        result.log.insert(result.log.end(), logs.begin(), logs.end());

        const int epoch = trainer.epoch();
        const auto probe = trainer.probe_loss(probe_set);
        if (!std::isfinite(probe.total)) {
            fail(Errc::non_finite, "validation loss diverged at epoch " + std::to_string(epoch));
        }
        if (opts.on_epoch) opts.on_epoch(epoch, probe);

        if (files && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch < cfg.epochs) {
            write_checkpoint(opts.out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".spck"), trainer.net());
            trainer.save_state(opts.out_dir / "train_state.spts");
        }
        if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !validation.empty()) {
            const auto report = evaluate_split(trainer.net(), cfg.mode, validation, cfg.schedule(), opts.inference);
            result.validation_reports.push_back(report);
            if (files) write_text(opts.out_dir / ("validation_epoch" + std::to_string(epoch) + ".json"), to_json(report));
        }
    }
    if (files) {
        log_file.flush();
        if (!log_file) fail(Errc::io, "failed writing the loss log");
        write_checkpoint(opts.out_dir / "checkpoint.spck", trainer.net());
        trainer.save_state(opts.out_dir / "train_state.spts");
    }
    result.net = trainer.net();
    return result;
}

} // namespace saltpepper
