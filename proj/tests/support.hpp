#pragma once

#include <doctest.h>

#include <cmath>
#include <random>

#include "saltpepper/error.hpp"
#include "saltpepper/tensor.hpp"

namespace testing {

// Runs fn and returns the code of the saltpepper::Error it throws.
template <class F>
saltpepper::Errc code_of(F&& fn) {
    try {
        fn();
    } catch (const saltpepper::Error& e) {
        return e.code();
    }
    FAIL("expected a saltpepper::Error");
    return saltpepper::Errc::io;
}

inline saltpepper::Tensor random_tensor(int c, int h, int w, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    saltpepper::Tensor t(c, h, w);
    for (auto& v : t.data) v = u(rng);
    return t;
}

inline double max_abs_diff(const saltpepper::Tensor& a, const saltpepper::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace testing
