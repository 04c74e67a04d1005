#include "saltpepper/sampler.hpp"

#include <cmath>

#include "saltpepper/error.hpp"

namespace saltpepper {

Tensor posterior_mean_from_x0(const Tensor& x_t, const Tensor& x0_hat, int t, const Schedule& sched) {
    require_same_shape(x_t, x0_hat, "posterior_mean_from_x0");
    if (t < 1 || t > sched.steps()) fail(Errc::timestep_out_of_range, "posterior mean needs 1 <= t <= T");
    // alpha_bar(0) = 1: the mean is x0_hat exactly, which the rounded coefficients miss by ~1e-13.
    if (t == 1) return x0_hat;
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    const double beta = sched.beta(t);
    const double c_xt = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double c_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    Tensor mu(x_t.channels, x_t.height, x_t.width);
    for (std::size_t i = 0; i < mu.size(); ++i) mu.data[i] = c_xt * x_t.data[i] + c_x0 * x0_hat.data[i];
    return mu;
}

Tensor posterior_mean_from_eps(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& sched) {
    require_same_shape(x_t, eps_hat, "posterior_mean_from_eps");
    const double beta = sched.beta(t);
    const double ab = sched.alpha_bar(t);
    const double c_eps = beta / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    Tensor mu(x_t.channels, x_t.height, x_t.width);
    for (std::size_t i = 0; i < mu.size(); ++i) mu.data[i] = (x_t.data[i] - c_eps * eps_hat.data[i]) * inv_sqrt_alpha;
    return mu;
}

namespace {

double step_sigma(const BlurConfig& blur, int t, int T) {
    // A one-step chain has no schedule to interpolate; it always uses the final sigma.
    return T < 2 ? blur.sigma_min : blur_sigma(blur, t - 1, T);
}

HeatmapStack blurred_x0_estimate(const Denoiser& d, const ReferenceImage& y, const HeatmapStack& x_t, int t,
                                 const Schedule& sched, const BlurConfig& blur) {
    HeatmapStack pred = d.predict(y, x_t, t);
    require_same_shape(pred.values, x_t.values, "denoiser output");
    if (d.parameterization() == Parameterization::predicts_eps) {
        pred.values = eps_to_x0(x_t.values, pred.values, t, sched);
    }
    pred.scale = ScaleTag::raw;
    blur_in_place(pred.values, step_sigma(blur, t, sched.steps()), blur.kernel_size);
    return pred;
}

} // namespace

ReverseStepResult reverse_step(const Denoiser& d, const ReferenceImage& y, const HeatmapStack& x_t, int t,
                               const Schedule& sched, const BlurConfig& blur, Rng& rng) {
    if (t < 1 || t > sched.steps()) {
        fail(Errc::timestep_out_of_range, "reverse_step timestep " + std::to_string(t) + " outside [1, " +
                                              std::to_string(sched.steps()) + "]");
    }
    ReverseStepResult r;
    r.x0_blurred = blurred_x0_estimate(d, y, x_t, t, sched, blur);
    r.x_prev = {posterior_mean_from_x0(x_t.values, r.x0_blurred.values, t, sched), ScaleTag::raw};
    if (t > 1) {
        const double sd = std::sqrt(sched.beta_tilde(t));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& v : r.x_prev.values.data) v += sd * normal(rng);
    }
    return r;
}

MultiStepResult sample_multistep(const Denoiser& d, const ReferenceImage& y, const Schedule& sched,
                                 const BlurConfig& blur, Rng& rng, bool keep_trajectory) {
    blur.validate();
    const int T = sched.steps();
    HeatmapStack x{draw_noise(d.heatmap_channels(), y.height(), y.width(), rng).values, ScaleTag::raw};

    MultiStepResult result;
    if (keep_trajectory) {
        result.trajectory.emplace();
        result.trajectory->states.reserve(T + 1);
        result.trajectory->predictions.reserve(T);
        result.trajectory->states.push_back(x);
    }
    for (int t = T; t >= 1; --t) {
        auto step = reverse_step(d, y, x, t, sched, blur, rng);
        x = std::move(step.x_prev);
        if (keep_trajectory) {
            result.trajectory->states.push_back(x);
            result.trajectory->predictions.push_back(std::move(step.x0_blurred));
        }
    }
    result.x0 = std::move(x);
    result.probability = spatial_softmax(result.x0);
    return result;
}

HeatmapStack sample_singlestep(const Denoiser& d, const ReferenceImage& y, const Schedule& sched,
                               const BlurConfig& blur, Rng& rng) {
    if (d.parameterization() != Parameterization::predicts_x0) {
        fail(Errc::parameterization_mismatch, "single-step sampling needs an x0-predicting denoiser");
    }
    blur.validate();
    HeatmapStack x_T{draw_noise(d.heatmap_channels(), y.height(), y.width(), rng).values, ScaleTag::raw};
    return blurred_x0_estimate(d, y, x_T, sched.steps(), sched, blur);
}

} // namespace saltpepper
