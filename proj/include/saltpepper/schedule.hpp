#pragma once

#include <vector>

namespace saltpepper {

/// Precomputed variance schedule for a T-step diffusion chain.
///
/// Timesteps are 1-based. alpha_bar(0) is defined as 1 so that the posterior
/// variance at t = 1 is exactly zero and the final reverse step is deterministic.
class Schedule {
public:
    int steps() const noexcept { return T_; }

    double beta(int t) const { return beta_[check(t, 1)]; }
    double alpha(int t) const { return 1.0 - beta_[check(t, 1)]; }
    double alpha_bar(int t) const { return alpha_bar_[check(t, 0)]; }
    double beta_tilde(int t) const { return beta_tilde_[check(t, 1)]; }

    friend Schedule make_linear_schedule(int T, double beta1, double betaT);

private:
    int check(int t, int lo) const;

    int T_ = 0;
    // Index 0 is unused for beta/beta_tilde and holds 1.0 for alpha_bar.
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
    std::vector<double> beta_tilde_;
};

/// Linearly spaced betas from beta1 to betaT (constant beta1 when T = 1).
Schedule make_linear_schedule(int T, double beta1, double betaT);

struct BlurConfig {
    int kernel_size = 13;
    double sigma_min = 0.1;
    double sigma_max = 14.0;

    void validate() const;
};

/// sigma_min + t * (sigma_max - sigma_min) / (T - 1), for t in [0, T-1].
double blur_sigma(const BlurConfig& cfg, int t, int T);

} // namespace saltpepper
