// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "saltpepper/cli.hpp"
#include "saltpepper/config.hpp"
#include "saltpepper/loss.hpp"
#include "saltpepper/metrics.hpp"
#include "saltpepper/runtime.hpp"
#include "saltpepper/sampler.hpp"
#include "saltpepper/train.hpp"

using namespace saltpepper;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

int failures = 0;

void criterion(int n, const char* name, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    std::printf("%s %d %s (%.1fs)%s%s\n", o.pass ? "PASS" : "FAIL", n, name, seconds_since(t0),
                o.detail.empty() ? "" : ": ", o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

Tensor random_tensor(int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(c, h, w);
    for (auto& v : t.data) v = u(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

HeatmapStack few_hot(int c, int h, int w, Rng& rng) {
    LandmarkSet lm{{}, {w, h}, {}};
    std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1);
    for (int i = 0; i < c; ++i) lm.points.push_back({double(px(rng)), double(py(rng))});
    return to_diffusion_scale(encode_landmarks(lm, h, w));
}

class OracleDenoiser final : public Denoiser {
public:
    OracleDenoiser(HeatmapStack x0, Parameterization p, const Schedule& sched)
        : x0_(std::move(x0)), param_(p), sched_(sched) {}
    Parameterization parameterization() const override { return param_; }
    int heatmap_channels() const override { return x0_.channels(); }
    HeatmapStack predict(const ReferenceImage&, const HeatmapStack& x_t, int t) const override {
        if (param_ == Parameterization::predicts_x0) return {x0_.values, ScaleTag::raw};
        return {x0_to_eps(x_t.values, x0_.values, t, sched_), ScaleTag::raw};
    }

private:
    HeatmapStack x0_;
    Parameterization param_;
    const Schedule& sched_;
};

// ---------------------------------------------------------------------------

Outcome schedule_identities() {
    const auto t0 = Clock::now();
    Outcome o;
    double worst = 0.0;
    for (int T : {1, 2, 10, 200}) {
        const auto s = make_linear_schedule(T, 1e-4, 0.02);
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double beta = T == 1 ? 1e-4 : 1e-4 + (0.02 - 1e-4) * (t - 1) / (T - 1);
            prod *= 1.0 - beta;
            worst = std::max(worst, std::abs(std::sqrt(s.alpha_bar(t)) - std::sqrt(prod)));
        }
        o.require(s.beta_tilde(1) == 0.0, "beta_tilde(1) != 0 for T = " + std::to_string(T));
    }
    o.require(worst <= 1e-12, fmt("sqrt(alpha_bar) off by %.3g", worst));
    const double secs = seconds_since(t0);
    o.require(secs < 1.0, fmt("took %.2fs", secs));
    if (o.pass) o.detail = fmt("max |sqrt(ab) - product| = %.2g", worst);
    return o;
}

Outcome parameterization_equivalence() {
    const auto t0 = Clock::now();
    Outcome o;
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    Rng rng(101);
    std::uniform_int_distribution<int> pick_t(1, 200);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        const int t = pick_t(rng);
        const HeatmapStack x0 = few_hot(2, 8, 8, rng);
        NoiseDraw eps{Tensor(2, 8, 8)};
        for (auto& v : eps.values.data) v = normal(rng);
        const Tensor x_t = q_sample(x0, t, eps, s).values;
        const Tensor a = posterior_mean_from_x0(x_t, x0.values, t, s);
        const Tensor b = posterior_mean_from_eps(x_t, eps.values, t, s);
        worst = std::max(worst, max_abs_diff(a, b));
    }
    o.require(worst <= 1e-6, fmt("means differ by %.3g", worst));
    const double secs = seconds_since(t0);
    o.require(secs < 5.0, fmt("took %.2fs", secs));
    if (o.pass) o.detail = fmt("max difference %.2g over 1000 triples", worst);
    return o;
}

Outcome forward_monte_carlo() {
    const auto t0 = Clock::now();
    Outcome o;
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    HeatmapStack x0{Tensor(1, 2, 2), ScaleTag::diffusion};
    x0.values.data = {1.0, -1.0, 0.5, 0.0};
    const int trials = 10000;
    Rng rng(2024);
    double worst_mean = 0.0, worst_var = 0.0;
    for (int t_star : {5, 50}) {
        std::vector<double> sum(4, 0.0), sum2(4, 0.0);
        for (int n = 0; n < trials; ++n) {
            HeatmapStack x = x0;
            for (int t = 1; t <= t_star; ++t) x = q_step(x, t, s, rng);
            for (int i = 0; i < 4; ++i) {
                sum[i] += x.values.data[i];
                sum2[i] += x.values.data[i] * x.values.data[i];
            }
        }
        const double ab = s.alpha_bar(t_star);
        const double se = std::sqrt((1 - ab) / trials);
        for (int i = 0; i < 4; ++i) {
            const double mean = sum[i] / trials;
            const double var = sum2[i] / trials - mean * mean;
            worst_mean = std::max(worst_mean, std::abs(mean - x0.values.data[i] * std::sqrt(ab)) / se);
            worst_var = std::max(worst_var, std::abs(var / (1 - ab) - 1.0));
        }
    }
    o.require(worst_mean < 3.0, fmt("mean off by %.2f standard errors", worst_mean));
    o.require(worst_var < 0.05, fmt("variance off by %.1f%%", 100 * worst_var));
    const double secs = seconds_since(t0);
    o.require(secs < 30.0, fmt("took %.1fs", secs));
    if (o.pass) o.detail = fmt("mean within %.2f SE, variance within %.2f%%", worst_mean, 100 * worst_var);
    return o;
}

Outcome gradients() {
    const auto t0 = Clock::now();
    Outcome o;
    Rng rng(77);

    // loss_combined with respect to the logits
    LossWeights w;
    double worst_loss = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        const auto x0 = few_hot(2, 8, 8, rng);
        const Tensor pred = random_tensor(2, 8, 8, rng);
        Tensor grad(2, 8, 8);
        loss_combined(x0, pred, w, &grad);
        const double h = 1e-5;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            Tensor up = pred, down = pred;
            up.data[i] += h;
            down.data[i] -= h;
            const double fd = (loss_combined(x0, up, w).total - loss_combined(x0, down, w).total) / (2 * h);
            worst_loss = std::max(worst_loss, std::abs(fd - grad.data[i]) /
                                                  std::max({std::abs(fd), std::abs(grad.data[i]), 1e-8}));
        }
    }
    o.require(worst_loss < 1e-4, fmt("loss gradient relative error %.3g", worst_loss));

    // every parameter of the toy network on 16x16, N = 2
    UNetConfig cfg;
    cfg.landmarks = 2;
    UNet net(cfg);
    net.initialize(rng);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (const auto& spec : net.manifest())
        if (spec.shape.size() == 1)
            for (std::size_t i = 0; i < spec.size; ++i) net.parameters()[spec.offset + i] += u(rng);
    const Tensor in = random_tensor(3, 16, 16, rng);
    const Tensor g = random_tensor(2, 16, 16, rng);
    auto inner = [&](const Tensor& out) {
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * g.data[i];
        return s;
    };
    Tape tape;
    net.forward(in, 13, &tape);
    const auto grad = net.backward(tape, g);
    // biases ahead of GroupNorm have tiny gradients, so the step must be small
    const double h = 1e-5;
    double worst_net = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double keep = net.parameters()[i];
        net.parameters()[i] = keep + h;
        const double up = inner(net.forward(in, 13));
        net.parameters()[i] = keep - h;
        const double down = inner(net.forward(in, 13));
        net.parameters()[i] = keep;
        const double fd = (up - down) / (2 * h);
        worst_net = std::max(worst_net, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
    }
    o.require(worst_net < 1e-3, fmt("network gradient relative error %.3g", worst_net));
    const double secs = seconds_since(t0);
    o.require(secs < 120.0, fmt("took %.1fs", secs));
    if (o.pass) {
        o.detail = fmt("loss rel err %.2g, network rel err %.2g over %.0f parameters", worst_loss, worst_net,
                       double(grad.size()));
    }
    return o;
}

Outcome normalization() {
    Outcome o;
    Rng rng(5);
    double worst_softmax = 0.0;
    for (int n = 0; n < 100; ++n) {
        const HeatmapStack s{random_tensor(3, 16, 20, rng, -30.0, 30.0), ScaleTag::raw};
        const auto p = spatial_softmax(s);
        for (int c = 0; c < 3; ++c) {
            double sum = 0.0;
            for (double v : p.values.channel(c)) sum += v;
            worst_softmax = std::max(worst_softmax, std::abs(sum - 1.0));
        }
    }
    o.require(worst_softmax <= 1e-6, fmt("softmax sums off by %.3g", worst_softmax));
    double worst_kernel = 0.0;
    for (double sigma : {0.0, 0.1, 1.0, 14.0}) {
        double sum = 0.0;
        for (double v : gaussian_kernel(13, sigma)) sum += v;
        worst_kernel = std::max(worst_kernel, std::abs(sum - 1.0));
    }
    o.require(worst_kernel <= 1e-12, fmt("kernel sums off by %.3g", worst_kernel));
    const HeatmapStack s{random_tensor(4, 32, 24, rng), ScaleTag::raw};
    o.require(blur(s, 0.0, 13).values.data == s.values.data, "blur at sigma 0 changed the stack");
    if (o.pass) o.detail = fmt("softmax %.2g, kernel %.2g, sigma-0 blur exact", worst_softmax, worst_kernel);
    return o;
}

Outcome metrics_oracle() {
    Outcome o;
    Rng rng(9);
    std::uniform_real_distribution<double> pos(0.0, 600.0), off(-40.0, 40.0);
    const Spacing sp{0.30234375, 0.3};
    double worst = 0.0;
    bool sdr_exact = true;
    for (int corpus = 0; corpus < 100; ++corpus) {
        std::vector<LandmarkSet> preds, gts;
        std::vector<double> flat;
        for (int img = 0; img < 10; ++img) {
            LandmarkSet g{{}, {640, 800}, sp}, p{{}, {640, 800}, sp};
            for (int k = 0; k < 19; ++k) {
                const Point q{pos(rng), pos(rng)};
                const Point d{q.x + off(rng), q.y + off(rng)};
                g.points.push_back(q);
                p.points.push_back(d);
                const double dx = (d.x - q.x) * sp.sx, dy = (d.y - q.y) * sp.sy;
                flat.push_back(std::sqrt(dx * dx + dy * dy));
            }
            gts.push_back(g);
            preds.push_back(p);
        }
        const auto r = evaluate(preds, gts);
        double sum = 0.0;
        for (double d : flat) sum += d;
        worst = std::max(worst, std::abs(r.mre_mm - sum / flat.size()));
        const double radii[] = {2.0, 2.5, 4.0};
        const double got[] = {r.sdr_2mm, r.sdr_2_5mm, r.sdr_4mm};
        for (int k = 0; k < 3; ++k) {
            int hits = 0;
            for (double d : flat) hits += d < radii[k];
            sdr_exact = sdr_exact && got[k] == 100.0 * hits / flat.size();
        }
    }
    o.require(worst <= 1e-12, fmt("mre differs by %.3g", worst));
    o.require(sdr_exact, "sdr differs from the counting loop");

    const LandmarkSet g{{{10, 10}}, {64, 64}, {0.1, 0.1}}, p{{{13, 14}}, {64, 64}, {0.1, 0.1}};
    o.require(radial_errors(p, g)[0] == 0.5, "(3,4) px at 0.1 mm/px is not 0.5 mm");
    const std::vector<double> edge{1.9, 2.0, 2.1};
    o.require(sdr(edge, 2.0) == 100.0 / 3.0, "boundary value counted as a success");
    if (o.pass) o.detail = fmt("100 corpora, mre max diff %.2g, sdr exact", worst);
    return o;
}

Outcome oracle_convergence() {
    Outcome o;
    const auto s = make_linear_schedule(10, 1e-4, 0.02);
    Rng pick(3);
    const auto target = few_hot(3, 16, 16, pick);
    const ReferenceImage y{Tensor(1, 16, 16)};
    double worst = 0.0;
    for (auto p : {Parameterization::predicts_x0, Parameterization::predicts_eps}) {
        OracleDenoiser oracle(target, p, s);
        for (const BlurConfig& blur : {BlurConfig{}, BlurConfig{13, 0.0, 0.0}}) {
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                Rng rng(seed);
                const auto res = sample_multistep(oracle, y, s, blur, rng);
                worst = std::max(worst, max_abs_diff(res.x0.values, target.values));
            }
            Rng r1(1), r2(2);
            const HeatmapStack x1{Tensor(3, 16, 16, 0.3), ScaleTag::raw};
            const auto a = reverse_step(oracle, y, x1, 1, s, blur, r1);
            const auto b = reverse_step(oracle, y, x1, 1, s, blur, r2);
            o.require(a.x_prev.values.data == b.x_prev.values.data, "t = 1 step depends on the generator");
        }
    }
    o.require(worst <= 1e-2, fmt("chain ends %.3g from x0", worst));
    if (o.pass) o.detail = fmt("max per-pixel distance %.2g, t = 1 step noise-free", worst);
    return o;
}

Config desk_config() {
    Config cfg = load_config(fs::path(SALTPEPPER_SOURCE_DIR) / "configs" / "desk.cfg");
    cfg.resolve();
    cfg.validate();
    return cfg;
}

double mre_px(const EvalReport& r, const Spacing& s) { return r.mre_mm / s.sx; }

Outcome desk_end_to_end() {
    Outcome o;
    const Config cfg = desk_config();
    const auto corpus = synth_corpus(cfg.synth.options);
    const auto manifest = split_ids(corpus, cfg.synth.train, cfg.synth.validation);
    const auto train = select_split(corpus, manifest, "train");
    const auto test = select_split(corpus, manifest, "test");
    const Spacing sp = cfg.synth.options.spacing;
    const Schedule sched = cfg.train.schedule();

    const auto t0 = Clock::now();
    const auto fitted = fit(train, {}, cfg.model, cfg.train);
    InferenceOptions io;
    io.blur = cfg.blur;
    io.seed = cfg.seed;
    const double multi = mre_px(evaluate_split(fitted.net, TrainMode::diffusion, test, sched, io), sp);
    const double run_secs = seconds_since(t0);
    io.single_step = true;
    const double single = mre_px(evaluate_split(fitted.net, TrainMode::diffusion, test, sched, io), sp);

    // small overfit run on four training images
    const std::vector<DatasetRecord> four(train.begin(), train.begin() + 4);
    TrainConfig small = cfg.train;
    small.epochs = 600;
    const auto overfit = fit(four, {}, cfg.model, small);
    io.single_step = false;
    const double four_mre = mre_px(evaluate_split(overfit.net, TrainMode::diffusion, four, sched, io), sp);

    o.require(train.size() == 200 && test.size() == 50, "desk corpus is not 200 train / 50 test");
    o.require(multi <= 2.0, fmt("(a) multi-step test MRE %.3f px > 2.0", multi));
    o.require(multi <= single, fmt("(b) multi-step %.3f px worse than single-step %.3f px", multi, single));
    o.require(four_mre <= 1.5, fmt("(c) four-image overfit MRE %.3f px > 1.5", four_mre));
    o.require(run_secs <= 1200.0, fmt("train + sample took %.0fs", run_secs));
    if (o.pass) {
        o.detail = fmt("multi %.3f px, single %.3f px on test; ", multi, single) +
                   fmt("4-image overfit %.3f px; train + sample %.0fs", four_mre, run_secs);
    }
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome determinism() {
    Outcome o;
    const auto root = fs::temp_directory_path() / "saltpepper_acceptance";
    fs::remove_all(root);
    const std::string cfg = (fs::path(SALTPEPPER_SOURCE_DIR) / "configs" / "desk.cfg").string();
    std::string evals[2];
    for (int run = 0; run < 2; ++run) {
        const auto dir = root / ("run" + std::to_string(run));
        const std::string corpus = (dir / "corpus").string();
        std::ostringstream out, err;
        auto step = [&](std::vector<std::string> args) {
            args.insert(args.end(), {"-c", cfg, "--train.epochs=1"});
            const int code = run_cli(args, out, err);
            if (code != 0) throw std::runtime_error(args[0] + " exited with " + std::to_string(code) + ": " + err.str());
        };
        step({"synth", "-o", corpus});
        step({"train", "--corpus", corpus, "-o", (dir / "run").string()});
        step({"sample", "--checkpoint", (dir / "run" / "checkpoint.spck").string(), "--corpus", corpus, "-o",
              (dir / "sample").string(), "--sample.overlays=false"});
        std::ostringstream json;
        std::vector<std::string> eval{"eval", "--pred", (dir / "sample" / "landmarks").string(), "--gt",
                                      corpus + "/annotations/gt", "--manifest", corpus + "/manifest.txt", "-o",
                                      (dir / "eval.json").string(), "-c", cfg};
        if (run_cli(eval, json, err) != 0) throw std::runtime_error("eval failed: " + err.str());
        evals[run] = slurp(dir / "eval.json");
        o.require(evals[run] == json.str(), "eval stdout and file differ");
    }
    int csvs = 0;
    for (const auto& e : fs::directory_iterator(root / "run0" / "sample" / "landmarks")) {
        ++csvs;
        const auto other = root / "run1" / "sample" / "landmarks" / e.path().filename();
        o.require(slurp(e.path()) == slurp(other), "landmark CSV " + e.path().filename().string() + " differs");
    }
    o.require(csvs == 50, "expected 50 landmark CSVs, found " + std::to_string(csvs));
    o.require(evals[0] == evals[1], "eval JSON differs between runs");
    if (o.pass) o.detail = std::to_string(csvs) + " landmark CSVs and the eval JSON are byte-identical";
    fs::remove_all(root);
    return o;
}

} // namespace

int main() {
    configure_allocator();
    criterion(1, "schedule identities", schedule_identities);
    criterion(2, "parameterization equivalence", parameterization_equivalence);
    criterion(3, "Monte-Carlo forward equivalence", forward_monte_carlo);
    criterion(4, "gradient suite", gradients);
    criterion(5, "normalization suite", normalization);
    criterion(6, "metrics oracle", metrics_oracle);
    criterion(7, "oracle-denoiser convergence", oracle_convergence);
    criterion(8, "desk-scale end-to-end", desk_end_to_end);
    criterion(9, "pipeline determinism", determinism);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
