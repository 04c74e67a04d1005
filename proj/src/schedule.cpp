#include "saltpepper/schedule.hpp"

#include <cmath>
#include <string>

#include "saltpepper/error.hpp"

namespace saltpepper {

int Schedule::check(int t, int lo) const {
    if (t < lo || t > T_) {
        fail(Errc::timestep_out_of_range,
             "timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " + std::to_string(T_) + "]");
    }
    return t;
}

Schedule make_linear_schedule(int T, double beta1, double betaT) {
    if (T < 1) fail(Errc::invalid_range, "schedule needs T >= 1, got " + std::to_string(T));
    if (!(beta1 > 0.0 && beta1 <= betaT && betaT < 1.0)) {
        fail(Errc::invalid_range, "schedule needs 0 < beta1 <= betaT < 1");
    }

    Schedule s;
    s.T_ = T;
    s.beta_.assign(T + 1, 0.0);
    s.alpha_bar_.assign(T + 1, 1.0);
    s.beta_tilde_.assign(T + 1, 0.0);

    for (int t = 1; t <= T; ++t) {
        s.beta_[t] = T == 1 ? beta1 : beta1 + (t - 1) * (betaT - beta1) / (T - 1);
        s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.beta_[t]);
        s.beta_tilde_[t] = (1.0 - s.alpha_bar_[t - 1]) / (1.0 - s.alpha_bar_[t]) * s.beta_[t];
    }
    return s;
}

void BlurConfig::validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        fail(Errc::even_kernel, "blur kernel size must be odd and positive, got " + std::to_string(kernel_size));
    }
    if (!(sigma_min >= 0.0 && sigma_max >= sigma_min)) {
        fail(Errc::invalid_range, "blur needs sigma_max >= sigma_min >= 0");
    }
}

double blur_sigma(const BlurConfig& cfg, int t, int T) {
    if (T < 2) fail(Errc::invalid_range, "blur schedule needs T >= 2");
    if (t < 0 || t > T - 1) {
        fail(Errc::timestep_out_of_range,
             "blur timestep " + std::to_string(t) + " outside [0, " + std::to_string(T - 1) + "]");
    }
    return cfg.sigma_min + t * (cfg.sigma_max - cfg.sigma_min) / (T - 1);
}

} // namespace saltpepper
