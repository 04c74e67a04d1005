#pragma once

#include <random>
#include <utility>

#include "saltpepper/heatmap.hpp"
#include "saltpepper/schedule.hpp"
#include "saltpepper/tensor.hpp"

namespace saltpepper {

using Rng = std::mt19937_64;

/// Conditioning image y, values in [-1, 1]. Never noised.
struct ReferenceImage {
    Tensor pixels;

    int channels() const noexcept { return pixels.channels; }
    int height() const noexcept { return pixels.height; }
    int width() const noexcept { return pixels.width; }
};

/// Standard normal draw with the shape of the stack it noises.
struct NoiseDraw {
    Tensor values;
};

NoiseDraw draw_noise(int channels, int height, int width, Rng& rng);

/// x0 * sqrt(alpha_bar_t) + eps * sqrt(1 - alpha_bar_t); result is raw-tagged.
HeatmapStack q_sample(const HeatmapStack& x0, int t, const NoiseDraw& eps, const Schedule& sched);

/// One forward transition: x_prev * sqrt(1 - beta_t) + z * sqrt(beta_t).
HeatmapStack q_step(const HeatmapStack& x_prev, int t, const Schedule& sched, Rng& rng);

/// Image channels first, then heatmap channels.
Tensor concat_condition(const ReferenceImage& y, const HeatmapStack& x_t);
std::pair<ReferenceImage, HeatmapStack> split_condition(const Tensor& input, int image_channels);

/// Replaces each heatmap channel with the diffusion background (-1) with probability p.
HeatmapStack channel_dropout(const HeatmapStack& x0, double p, Rng& rng);

} // namespace saltpepper
