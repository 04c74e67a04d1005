#pragma once

#include "saltpepper/forward.hpp"
#include "saltpepper/heatmap.hpp"
#include "saltpepper/tensor.hpp"

namespace saltpepper {

/// How the per-pixel cross-entropy terms are reduced within one image.
enum class NllReduction {
    channel_sum, // sum over pixels per channel, then sum over channels
    pixel_mean,  // mean over every entry of the stack
};

struct LossWeights {
    double lambda_s = 0.01;
    double lambda_nll = 1.0;
    double epsilon_floor = 1e-9;
    NllReduction reduction = NllReduction::channel_sum;

    void validate() const;
};

struct LossBreakdown {
    double loss_s = 0.0;
    double loss_nll = 0.0;
    double total = 0.0;
};

/// Mean squared difference over all entries.
double loss_simple(const NoiseDraw& eps_true, const Tensor& eps_pred);
double loss_s(const HeatmapStack& x0, const Tensor& x0_pred);

/// Cross-entropy of the unit-scale target against spatial_softmax(logits),
/// with `floor` added inside the log. Unweighted.
double loss_nll(const HeatmapStack& x0_unit, const HeatmapStack& logits, double floor,
                NllReduction reduction = NllReduction::channel_sum);

/// Adds d(loss_nll)/d(logits) * scale into grad.
double loss_nll_with_grad(const HeatmapStack& x0_unit, const Tensor& logits, double floor, NllReduction reduction,
                          double scale, Tensor& grad);

/// lambda_s * loss_s(x0, pred) + lambda_nll * loss_nll(unit(x0), pred). When grad is
/// non-null it receives the gradient with respect to x0_pred.
LossBreakdown loss_combined(const HeatmapStack& x0, const Tensor& x0_pred, const LossWeights& w,
                            Tensor* grad = nullptr);

/// loss_simple with its gradient with respect to eps_pred.
double loss_simple_with_grad(const NoiseDraw& eps_true, const Tensor& eps_pred, Tensor& grad);

} // namespace saltpepper
