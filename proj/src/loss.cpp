#include "saltpepper/loss.hpp"

#include <cmath>

#include "saltpepper/error.hpp"

namespace saltpepper {

void LossWeights::validate() const {
    if (!(lambda_s >= 0.0 && lambda_nll >= 0.0)) fail(Errc::config, "loss weights must be >= 0");
    if (!(lambda_s > 0.0 || lambda_nll > 0.0)) fail(Errc::config, "at least one loss weight must be > 0");
    if (!(epsilon_floor >= 0.0)) fail(Errc::config, "loss epsilon_floor must be >= 0");
}

namespace {

double mse(const Tensor& a, const Tensor& b, const char* what) {
    require_same_shape(a, b, what);
    if (a.empty()) fail(Errc::shape_mismatch, std::string(what) + " on empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

} // namespace

double loss_simple(const NoiseDraw& eps_true, const Tensor& eps_pred) {
    return mse(eps_true.values, eps_pred, "loss_simple");
}

double loss_simple_with_grad(const NoiseDraw& eps_true, const Tensor& eps_pred, Tensor& grad) {
    const double value = loss_simple(eps_true, eps_pred);
    require_same_shape(eps_pred, grad, "loss_simple gradient");
    const double k = 2.0 / static_cast<double>(eps_pred.size());
    for (std::size_t i = 0; i < grad.size(); ++i) grad.data[i] += k * (eps_pred.data[i] - eps_true.values.data[i]);
    return value;
}

double loss_s(const HeatmapStack& x0, const Tensor& x0_pred) {
    if (x0.scale != ScaleTag::diffusion) fail(Errc::wrong_scale, "loss_s expects a diffusion-scale target");
    return mse(x0.values, x0_pred, "loss_s");
}

double loss_nll_with_grad(const HeatmapStack& x0_unit, const Tensor& logits, double floor, NllReduction reduction,
                          double scale, Tensor& grad) {
    if (x0_unit.scale != ScaleTag::unit) fail(Errc::wrong_scale, "loss_nll expects a unit-scale target");
    require_same_shape(x0_unit.values, logits, "loss_nll");
    const bool want_grad = scale != 0.0;
    if (want_grad) require_same_shape(logits, grad, "loss_nll gradient");

    const double norm = reduction == NllReduction::pixel_mean ? 1.0 / static_cast<double>(logits.size()) : 1.0;
    const std::size_t hw = logits.plane();
    std::vector<double> prob(hw);
    double total = 0.0;
    for (int c = 0; c < logits.channels; ++c) {
        const auto z = logits.channel(c);
        const auto y = x0_unit.values.channel(c);
        double peak = -INFINITY;
        for (double v : z) {
            if (!std::isfinite(v)) fail(Errc::non_finite, "loss_nll logits are not finite");
            peak = std::max(peak, v);
        }
        double denom = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            prob[i] = std::exp(z[i] - peak);
            denom += prob[i];
        }
        // L = -sum_p y_p log(s_p + f)
        // dL/dz_q = s_q * sum_p y_p s_p / (s_p + f) - y_q s_q / (s_q + f)
        double ce = 0.0;
        double weighted = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            prob[i] /= denom;
            if (y[i] != 0.0) {
                ce -= y[i] * std::log(prob[i] + floor);
                weighted += y[i] * prob[i] / (prob[i] + floor);
            }
        }
        total += ce;
        if (want_grad) {
            auto g = grad.channel(c);
            for (std::size_t i = 0; i < hw; ++i) {
                const double target_term = y[i] != 0.0 ? y[i] * prob[i] / (prob[i] + floor) : 0.0;
                g[i] += scale * norm * (prob[i] * weighted - target_term);
            }
        }
    }
    return total * norm;
}

double loss_nll(const HeatmapStack& x0_unit, const HeatmapStack& logits, double floor, NllReduction reduction) {
    Tensor unused;
    return loss_nll_with_grad(x0_unit, logits.values, floor, reduction, 0.0, unused);
}

LossBreakdown loss_combined(const HeatmapStack& x0, const Tensor& x0_pred, const LossWeights& w, Tensor* grad) {
    w.validate();
    LossBreakdown out;
    out.loss_s = loss_s(x0, x0_pred);
    const HeatmapStack unit = to_unit_scale(x0);
    if (grad != nullptr) {
        require_same_shape(x0_pred, *grad, "loss_combined gradient");
        const double k = w.lambda_s * 2.0 / static_cast<double>(x0_pred.size());
        for (std::size_t i = 0; i < grad->size(); ++i) grad->data[i] += k * (x0_pred.data[i] - x0.values.data[i]);
        out.loss_nll = loss_nll_with_grad(unit, x0_pred, w.epsilon_floor, w.reduction, w.lambda_nll, *grad);
    } else {
        Tensor unused;
        out.loss_nll = loss_nll_with_grad(unit, x0_pred, w.epsilon_floor, w.reduction, 0.0, unused);
    }
    out.total = w.lambda_s * out.loss_s + w.lambda_nll * out.loss_nll;
    return out;
}

} // namespace saltpepper
