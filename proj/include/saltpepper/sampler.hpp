#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "saltpepper/denoiser.hpp"
#include "saltpepper/forward.hpp"
#include "saltpepper/heatmap.hpp"
#include "saltpepper/schedule.hpp"

namespace saltpepper {

struct SampleTrajectory {
    std::vector<HeatmapStack> states;      // x_T .. x_0 (T + 1 entries)
    std::vector<HeatmapStack> predictions; // blurred x0 estimates, one per step (T entries)
    std::uint64_t seed = 0;
};

/// mu = x_t * sqrt(alpha_t)(1 - ab_{t-1})/(1 - ab_t) + x0 * sqrt(ab_{t-1}) beta_t/(1 - ab_t)
Tensor posterior_mean_from_x0(const Tensor& x_t, const Tensor& x0_hat, int t, const Schedule& sched);
/// mu = (x_t - eps * beta_t / sqrt(1 - ab_t)) / sqrt(alpha_t)
Tensor posterior_mean_from_eps(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& sched);

struct ReverseStepResult {
    HeatmapStack x_prev;
    HeatmapStack x0_blurred;
};

/// One reverse transition. The denoiser's x0 estimate is blurred at sigma(t - 1)
/// before entering the posterior mean; the t = 1 step adds no noise.
ReverseStepResult reverse_step(const Denoiser& d, const ReferenceImage& y, const HeatmapStack& x_t, int t,
                               const Schedule& sched, const BlurConfig& blur, Rng& rng);

struct MultiStepResult {
    HeatmapStack x0;
    HeatmapStack probability;
    std::optional<SampleTrajectory> trajectory;
};

MultiStepResult sample_multistep(const Denoiser& d, const ReferenceImage& y, const Schedule& sched,
                                 const BlurConfig& blur, Rng& rng, bool keep_trajectory = false);

/// Blurred x0 prediction straight from x_T ~ N(0, I). Requires an x0-predicting denoiser.
HeatmapStack sample_singlestep(const Denoiser& d, const ReferenceImage& y, const Schedule& sched,
                               const BlurConfig& blur, Rng& rng);

} // namespace saltpepper
