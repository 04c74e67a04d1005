#include "saltpepper/forward.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "saltpepper/error.hpp"

namespace saltpepper {

NoiseDraw draw_noise(int channels, int height, int width, Rng& rng) {
    NoiseDraw eps{Tensor(channels, height, width)};
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : eps.values.data) v = normal(rng);
    return eps;
}

HeatmapStack q_sample(const HeatmapStack& x0, int t, const NoiseDraw& eps, const Schedule& sched) {
    require_same_shape(x0.values, eps.values, "q_sample noise");
    if (t < 1) fail(Errc::timestep_out_of_range, "q_sample needs t >= 1");
    const double ab = sched.alpha_bar(t);
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    HeatmapStack out{Tensor(x0.channels(), x0.height(), x0.width()), ScaleTag::raw};
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values.data[i] = x0.values.data[i] * signal + eps.values.data[i] * noise;
    }
    return out;
}

HeatmapStack q_step(const HeatmapStack& x_prev, int t, const Schedule& sched, Rng& rng) {
    const double beta = sched.beta(t);
    const double keep = std::sqrt(1.0 - beta);
    const double noise = std::sqrt(beta);
    std::normal_distribution<double> normal(0.0, 1.0);
    HeatmapStack out{x_prev.values, ScaleTag::raw};
    for (auto& v : out.values.data) v = v * keep + normal(rng) * noise;
    return out;
}

Tensor concat_condition(const ReferenceImage& y, const HeatmapStack& x_t) {
    if (y.height() != x_t.height() || y.width() != x_t.width()) {
        fail(Errc::shape_mismatch, "concat_condition: image " + y.pixels.shape_string() + " vs heatmap " +
                                       x_t.values.shape_string());
    }
    Tensor out(y.channels() + x_t.channels(), y.height(), y.width());
    std::copy(y.pixels.data.begin(), y.pixels.data.end(), out.data.begin());
    std::copy(x_t.values.data.begin(), x_t.values.data.end(), out.data.begin() + static_cast<long>(y.pixels.size()));
    return out;
}

std::pair<ReferenceImage, HeatmapStack> split_condition(const Tensor& input, int image_channels) {
    if (image_channels < 0 || image_channels > input.channels) {
        fail(Errc::shape_mismatch, "split_condition: " + std::to_string(image_channels) + " image channels of " +
                                       std::to_string(input.channels));
    }
    ReferenceImage y{Tensor(image_channels, input.height, input.width)};
    HeatmapStack x{Tensor(input.channels - image_channels, input.height, input.width), ScaleTag::raw};
    const auto split = input.data.begin() + static_cast<long>(y.pixels.size());
    std::copy(input.data.begin(), split, y.pixels.data.begin());
    std::copy(split, input.data.end(), x.values.data.begin());
    return {std::move(y), std::move(x)};
}

HeatmapStack channel_dropout(const HeatmapStack& x0, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) fail(Errc::invalid_range, "channel dropout probability must be in [0, 1]");
    HeatmapStack out = x0;
    std::bernoulli_distribution drop(p);
    for (int c = 0; c < out.channels(); ++c) {
        if (drop(rng)) {
            auto ch = out.values.channel(c);
            std::fill(ch.begin(), ch.end(), -1.0);
        }
    }
    return out;
}

} // namespace saltpepper
