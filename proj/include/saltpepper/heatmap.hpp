#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "saltpepper/tensor.hpp"

namespace saltpepper {

/// Value convention carried by a heatmap stack.
enum class ScaleTag : std::uint8_t {
    diffusion = 0,   // background -1, landmark +1
    unit = 1,        // [0, 1]
    probability = 2, // each channel sums to 1
    raw = 3,         // unconstrained (noisy states, logits)
};

const char* to_string(ScaleTag tag) noexcept;

struct HeatmapStack {
    Tensor values;
    ScaleTag scale = ScaleTag::raw;

    int channels() const noexcept { return values.channels; }
    int height() const noexcept { return values.height; }
    int width() const noexcept { return values.width; }
};

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

struct Frame {
    int width = 0;
    int height = 0;

    friend bool operator==(const Frame&, const Frame&) = default;
};

/// Millimetres per pixel along each axis.
struct Spacing {
    double sx = 0.1;
    double sy = 0.1;

    friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct LandmarkSet {
    std::vector<Point> points;
    Frame frame;
    Spacing spacing_mm;

    std::size_t size() const noexcept { return points.size(); }
    // Throws out_of_bounds when a point lies outside the frame or the set is empty.
    void validate() const;
};

/// One hot pixel per landmark at (round(y), round(x)); unit scale.
HeatmapStack encode_landmarks(const LandmarkSet& lm, int height, int width);

/// v -> 2v - 1
HeatmapStack to_diffusion_scale(const HeatmapStack& unit);
/// v -> (v + 1) / 2
HeatmapStack to_unit_scale(const HeatmapStack& diffusion);

/// Per-channel softmax over all pixel positions.
HeatmapStack spatial_softmax(const HeatmapStack& s);

/// Normalized isotropic Gaussian samples at integer offsets, row-major size x size.
/// sigma = 0 gives the discrete delta.
std::vector<double> gaussian_kernel(int size, double sigma);
std::vector<double> gaussian_kernel_1d(int size, double sigma);

/// Per-channel Gaussian convolution with edge-replicate padding. Keeps the scale tag.
HeatmapStack blur(const HeatmapStack& s, double sigma, int kernel_size = 13);
void blur_in_place(Tensor& t, double sigma, int kernel_size);

/// Per-channel argmax, ties resolved to the lowest row-major index.
LandmarkSet extract_landmarks(const HeatmapStack& s, Frame frame, Spacing spacing);

// "SPHM" dump: magic, N/h/w as u32 LE, N*h*w f32 LE, 1-byte scale tag.
void write_sphm(std::ostream& os, const HeatmapStack& s);
HeatmapStack read_sphm(std::istream& is);
void write_sphm(const std::filesystem::path& path, const HeatmapStack& s);
HeatmapStack read_sphm(const std::filesystem::path& path);

} // namespace saltpepper
