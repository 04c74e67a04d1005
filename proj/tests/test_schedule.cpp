#include <doctest.h>

#include <cmath>
#include <vector>

#include "saltpepper/schedule.hpp"
#include "support.hpp"

using namespace saltpepper;
using testing::code_of;

namespace {

// Straight-line reference, independent of Schedule's internals.
std::vector<double> oracle_alpha_bar(int T, double b1, double bT) {
    std::vector<double> out(T + 1, 1.0);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double beta = T == 1 ? b1 : b1 + (t - 1) * (bT - b1) / (T - 1);
        prod *= (1.0 - beta);
        out[t] = prod;
    }
    return out;
}

} // namespace

TEST_CASE("linear schedule endpoints") {
    auto s = make_linear_schedule(200, 1e-4, 0.02);
    CHECK(s.steps() == 200);
    CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(s.beta(200) == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(std::abs(s.alpha_bar(1) - 0.9999) < 1e-15);
    CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("alpha_bar matches the product oracle") {
    for (int T : {1, 2, 10, 50, 200}) {
        CAPTURE(T);
        auto s = make_linear_schedule(T, 1e-4, 0.02);
        auto ref = oracle_alpha_bar(T, 1e-4, 0.02);
        for (int t = 1; t <= T; ++t) CHECK(std::abs(s.alpha_bar(t) - ref[t]) < 1e-12);
    }
}

TEST_CASE("sqrt alpha_bar equals the product of single-step scalings") {
    auto s = make_linear_schedule(200, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 1; t <= 200; ++t) {
        prod *= std::sqrt(1.0 - s.beta(t));
        CHECK(std::abs(std::sqrt(s.alpha_bar(t)) - prod) < 1e-12);
    }
}

TEST_CASE("schedule invariants") {
    for (int T : {2, 10, 200}) {
        auto s = make_linear_schedule(T, 1e-4, 0.02);
        CHECK(s.beta_tilde(1) == 0.0);
        for (int t = 1; t <= T; ++t) {
            CHECK(s.alpha_bar(t) > 0.0);
            CHECK(s.alpha_bar(t) <= 1.0);
            CHECK(s.alpha(t) == doctest::Approx(1.0 - s.beta(t)));
            double expect = (1 - s.alpha_bar(t - 1)) / (1 - s.alpha_bar(t)) * s.beta(t);
            CHECK(std::abs(s.beta_tilde(t) - expect) < 1e-15);
            if (t >= 2) {
                CHECK(s.beta(t) > s.beta(t - 1));
                CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
                CHECK(s.beta_tilde(t) > 0.0);
                CHECK(s.beta_tilde(t) < s.beta(t));
            }
        }
    }
}

TEST_CASE("single-step schedule is constant") {
    auto s = make_linear_schedule(1, 0.3, 0.3);
    CHECK(s.beta(1) == 0.3);
    CHECK(s.beta_tilde(1) == 0.0);
}

TEST_CASE("schedule preconditions") {
    CHECK(code_of([] { make_linear_schedule(0, 1e-4, 0.02); }) == Errc::invalid_range);
    CHECK(code_of([] { make_linear_schedule(10, 0.0, 0.02); }) == Errc::invalid_range);
    CHECK(code_of([] { make_linear_schedule(10, 0.03, 0.02); }) == Errc::invalid_range);
    CHECK(code_of([] { make_linear_schedule(10, 1e-4, 1.0); }) == Errc::invalid_range);
    auto s = make_linear_schedule(10, 1e-4, 0.02);
    CHECK(code_of([&] { s.beta(0); }) == Errc::timestep_out_of_range);
    CHECK(code_of([&] { s.beta(11); }) == Errc::timestep_out_of_range);
    CHECK(code_of([&] { s.alpha_bar(-1); }) == Errc::timestep_out_of_range);
}

TEST_CASE("blur sigma") {
    BlurConfig cfg{13, 0.1, 14.0};
    CHECK(blur_sigma(cfg, 0, 200) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(blur_sigma(cfg, 199, 200) == doctest::Approx(14.0).epsilon(1e-15));
    BlurConfig zero{13, 0.0, 14.0};
    CHECK(std::abs(blur_sigma(zero, 100, 200) - 14.0 * 100 / 199) < 1e-12);

    double step = blur_sigma(cfg, 1, 200) - blur_sigma(cfg, 0, 200);
    for (int t = 0; t + 1 < 200; ++t) {
        double d = blur_sigma(cfg, t + 1, 200) - blur_sigma(cfg, t, 200);
        CHECK(std::abs(d - step) < 1e-12);
        CHECK(d >= 0.0);
    }

    CHECK(code_of([&] { blur_sigma(cfg, -1, 200); }) == Errc::timestep_out_of_range);
    CHECK(code_of([&] { blur_sigma(cfg, 200, 200); }) == Errc::timestep_out_of_range);
}

TEST_CASE("blur config validation") {
    CHECK_NOTHROW(BlurConfig{}.validate());
    CHECK_THROWS_AS((BlurConfig{12, 0.1, 14}.validate()), Error);
    CHECK_THROWS_AS((BlurConfig{13, 2.0, 1.0}.validate()), Error);
    CHECK_THROWS_AS((BlurConfig{13, -0.1, 1.0}.validate()), Error);
}
