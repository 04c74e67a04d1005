#include <doctest.h>

#include <cmath>

#include "saltpepper/sampler.hpp"
#include "support.hpp"

using namespace saltpepper;
using testing::code_of;

namespace {

// Returns the true x0 (or the noise it implies), whatever the input.
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

HeatmapStack one_hot_target(int c, int h, int w) {
    LandmarkSet lm{{}, {w, h}, {}};
    for (int i = 0; i < c; ++i) lm.points.push_back({double((3 * i + 2) % w), double((5 * i + 1) % h)});
    return to_diffusion_scale(encode_landmarks(lm, h, w));
}

UNet random_net(int landmarks, Parameterization p = Parameterization::predicts_x0) {
    UNetConfig cfg;
    cfg.landmarks = landmarks;
    cfg.parameterization = p;
    UNet net(cfg);
    Rng rng(41);
    net.initialize(rng);
    return net;
}

} // namespace

TEST_CASE("posterior mean at t = 1 is the x0 estimate") {
    auto sched = make_linear_schedule(200, 1e-4, 0.02);
    auto xt = testing::random_tensor(2, 4, 4, 1, -3, 3);
    auto x0 = testing::random_tensor(2, 4, 4, 2);
    CHECK(testing::max_abs_diff(posterior_mean_from_x0(xt, x0, 1, sched), x0) == 0.0);
}

TEST_CASE("posterior means agree across parameterizations") {
    for (int T : {10, 200}) {
        auto sched = make_linear_schedule(T, 1e-4, 0.02);
        Rng rng(T);
        std::uniform_int_distribution<int> pick(1, T);
        double worst = 0.0;
        for (int trial = 0; trial < 1000; ++trial) {
            int t = pick(rng);
            HeatmapStack x0{testing::random_tensor(1, 3, 3, rng()), ScaleTag::diffusion};
            auto eps = draw_noise(1, 3, 3, rng);
            auto xt = q_sample(x0, t, eps, sched).values;
            auto a = posterior_mean_from_x0(xt, x0.values, t, sched);
            auto b = posterior_mean_from_eps(xt, eps.values, t, sched);
            auto c = posterior_mean_from_eps(xt, x0_to_eps(xt, x0.values, t, sched), t, sched);
            worst = std::max({worst, testing::max_abs_diff(a, b), testing::max_abs_diff(a, c)});
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("posterior mean coefficients") {
    auto sched = make_linear_schedule(200, 1e-4, 0.02);
    auto xt = testing::random_tensor(1, 3, 3, 4, -2, 2);
    for (int t : {2, 50, 200}) {
        double ab = sched.alpha_bar(t), abp = sched.alpha_bar(t - 1), b = sched.beta(t);
        double s = std::sqrt(1 - b) * (1 - abp) / (1 - ab) + std::sqrt(abp) * b / (1 - ab);
        auto mu = posterior_mean_from_x0(xt, xt, t, sched);
        for (std::size_t i = 0; i < xt.size(); ++i) CHECK(std::abs(mu.data[i] - s * xt.data[i]) < 1e-12);
    }

    Tensor zero(1, 3, 3);
    auto mu0 = posterior_mean_from_eps(xt, zero, 37, sched);
    for (std::size_t i = 0; i < xt.size(); ++i)
        CHECK(mu0.data[i] == doctest::Approx(xt.data[i] / std::sqrt(1 - sched.beta(37))).epsilon(1e-14));

    // direct evaluation at t = T
    double prod = 1.0;
    for (int t = 1; t <= 200; ++t) prod *= 1.0 - (1e-4 + (t - 1) * (0.02 - 1e-4) / 199);
    auto e = testing::random_tensor(1, 3, 3, 5);
    auto mu = posterior_mean_from_eps(xt, e, 200, sched);
    for (std::size_t i = 0; i < xt.size(); ++i) {
        double expect = (xt.data[i] - e.data[i] * 0.02 / std::sqrt(1 - prod)) / std::sqrt(0.98);
        CHECK(std::abs(mu.data[i] - expect) < 1e-12);
    }

    CHECK(code_of([&] { posterior_mean_from_x0(xt, xt, 0, sched); }) == Errc::timestep_out_of_range);
    CHECK(code_of([&] { posterior_mean_from_eps(xt, xt, 201, sched); }) == Errc::timestep_out_of_range);
    CHECK(code_of([&] { posterior_mean_from_x0(xt, Tensor(1, 2, 2), 3, sched); }) == Errc::shape_mismatch);
}

TEST_CASE("final reverse step is noise-free") {
    auto sched = make_linear_schedule(10, 1e-4, 0.02);
    auto net = random_net(2);
    ReferenceImage y{testing::random_tensor(1, 16, 16, 1)};
    HeatmapStack x1{testing::random_tensor(2, 16, 16, 2), ScaleTag::raw};
    BlurConfig blur{13, 0.5, 3.0};
    Rng r1(1), r2(2);
    auto a = reverse_step(net, y, x1, 1, sched, blur, r1);
    auto b = reverse_step(net, y, x1, 1, sched, blur, r2);
    CHECK(a.x_prev.values.data == b.x_prev.values.data);
    CHECK(a.x_prev.values.data == a.x0_blurred.values.data);

    // the blur at t = 1 uses sigma_min
    auto raw = net.predict(y, x1, 1);
    CHECK(testing::max_abs_diff(saltpepper::blur(raw, 0.5, 13).values, a.x0_blurred.values) == 0.0);
}

TEST_CASE("reverse step with a delta blur is the plain DDPM update") {
    auto sched = make_linear_schedule(10, 1e-4, 0.02);
    for (auto p : {Parameterization::predicts_x0, Parameterization::predicts_eps}) {
        auto net = random_net(2, p);
        ReferenceImage y{testing::random_tensor(1, 16, 16, 3)};
        BlurConfig none{13, 0.0, 0.0};
        Rng rng(5), replay(5);
        auto res = sample_multistep(net, y, sched, none, rng, true);

        Tensor x = draw_noise(2, 16, 16, replay).values;
        for (int t = 10; t >= 1; --t) {
            auto out = net.predict(y, {x, ScaleTag::raw}, t).values;
            Tensor mu = p == Parameterization::predicts_x0 ? posterior_mean_from_x0(x, out, t, sched)
                                                           : posterior_mean_from_eps(x, out, t, sched);
            if (t > 1) {
                std::normal_distribution<double> normal(0.0, 1.0);
                for (auto& v : mu.data) v += std::sqrt(sched.beta_tilde(t)) * normal(replay);
            }
            x = mu;
        }
        CHECK(testing::max_abs_diff(res.x0.values, x) < 1e-9);
    }
}

TEST_CASE("oracle denoiser chain converges to x0") {
    auto sched = make_linear_schedule(10, 1e-4, 0.02);
    auto target = one_hot_target(3, 8, 8);
    BlurConfig none{13, 0.0, 0.0};
    ReferenceImage y{Tensor(1, 8, 8)};
    for (auto p : {Parameterization::predicts_x0, Parameterization::predicts_eps}) {
        OracleDenoiser oracle(target, p, sched);
        for (std::uint64_t seed : {1, 2, 3}) {
            Rng rng(seed);
            auto res = sample_multistep(oracle, y, sched, none, rng, true);
            CHECK(testing::max_abs_diff(res.x0.values, target.values) < 1e-2);
            auto lm = extract_landmarks(res.probability, {8, 8}, {});
            auto truth = extract_landmarks(target, {8, 8}, {});
            CHECK(lm.points == truth.points);
        }
    }
}

TEST_CASE("oracle posterior means contract toward x0") {
    auto sched = make_linear_schedule(10, 1e-4, 0.02);
    auto target = one_hot_target(2, 8, 8);
    Rng rng(9);
    Tensor x = draw_noise(2, 8, 8, rng).values;
    for (int t = 10; t >= 1; --t) {
        Tensor mu = posterior_mean_from_x0(x, target.values, t, sched);
        if (t <= 5) {
            for (std::size_t i = 0; i < x.size(); ++i)
                CHECK(std::abs(mu.data[i] - target.values.data[i]) <= std::abs(x.data[i] - target.values.data[i]) + 1e-6);
        }
        x = mu;
    }
    CHECK(testing::max_abs_diff(x, target.values) == 0.0);
}

TEST_CASE("multi-step sampling is reproducible and well formed") {
    auto sched = make_linear_schedule(6, 1e-4, 0.08);
    auto net = random_net(3);
    ReferenceImage y{testing::random_tensor(1, 16, 16, 7)};
    BlurConfig blur{13, 0.1, 4.0};
    Rng r1(77), r2(77);
    auto a = sample_multistep(net, y, sched, blur, r1, true);
    auto b = sample_multistep(net, y, sched, blur, r2, false);
    CHECK(a.x0.values.data == b.x0.values.data);
    CHECK(a.probability.values.data == b.probability.values.data);
    CHECK_FALSE(b.trajectory.has_value());
    REQUIRE(a.trajectory.has_value());
    CHECK(a.trajectory->states.size() == 7);
    CHECK(a.trajectory->predictions.size() == 6);
    for (const auto& s : a.trajectory->states) CHECK(s.values.same_shape(a.x0.values));
    for (const auto& s : a.trajectory->predictions) CHECK(s.values.same_shape(a.x0.values));
    CHECK(a.trajectory->states.back().values.data == a.x0.values.data);
    CHECK(a.probability.scale == ScaleTag::probability);
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (double v : a.probability.values.channel(c)) s += v;
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("single-step equals the first multi-step prediction") {
    auto sched = make_linear_schedule(8, 1e-4, 0.08);
    auto net = random_net(2);
    ReferenceImage y{testing::random_tensor(1, 16, 16, 8)};
    BlurConfig blur{13, 0.1, 14.0};
    Rng r1(5), r2(5);
    auto multi = sample_multistep(net, y, sched, blur, r1, true);
    auto single = sample_singlestep(net, y, sched, blur, r2);
    CHECK(single.channels() == 2);
    CHECK(single.values.data == multi.trajectory->predictions.front().values.data);

    auto eps_net = random_net(2, Parameterization::predicts_eps);
    CHECK(code_of([&] { sample_singlestep(eps_net, y, sched, blur, r1); }) == Errc::parameterization_mismatch);
    CHECK(code_of([&] { reverse_step(net, y, multi.x0, 9, sched, blur, r1); }) == Errc::timestep_out_of_range);
}
