#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace saltpepper {

/// Dense channels x height x width array of doubles, row-major within a channel.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }

    double& at(int c, int y, int x) noexcept {
        return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
    }
    double at(int c, int y, int x) const noexcept {
        return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
    }

    std::span<double> channel(int c) noexcept { return {data.data() + c * plane(), plane()}; }
    std::span<const double> channel(int c) const noexcept { return {data.data() + c * plane(), plane()}; }

    bool same_shape(const Tensor& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }

    std::string shape_string() const;
};

// Throws Errc::shape_mismatch naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

} // namespace saltpepper
