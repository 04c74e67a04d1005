#include "saltpepper/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"
#include "saltpepper/error.hpp"

namespace saltpepper {

const char* to_string(ScaleTag tag) noexcept {
    switch (tag) {
    case ScaleTag::diffusion: return "diffusion";
    case ScaleTag::unit: return "unit";
    case ScaleTag::probability: return "probability";
    case ScaleTag::raw: return "raw";
    }
    return "unknown";
}

void LandmarkSet::validate() const {
    if (points.empty()) fail(Errc::out_of_bounds, "landmark set is empty");
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (!(p.x >= 0.0 && p.x < frame.width && p.y >= 0.0 && p.y < frame.height)) {
            fail(Errc::out_of_bounds, "landmark " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " +
                                          std::to_string(p.y) + ") outside " + std::to_string(frame.width) + "x" +
                                          std::to_string(frame.height));
        }
    }
}

HeatmapStack encode_landmarks(const LandmarkSet& lm, int height, int width) {
    if (lm.points.empty()) fail(Errc::out_of_bounds, "cannot encode an empty landmark set");
    HeatmapStack out{Tensor(static_cast<int>(lm.points.size()), height, width, 0.0), ScaleTag::unit};
    for (int i = 0; i < out.channels(); ++i) {
        const auto row = static_cast<long>(std::lround(lm.points[i].y));
        const auto col = static_cast<long>(std::lround(lm.points[i].x));
        if (row < 0 || row >= height || col < 0 || col >= width) {
            fail(Errc::out_of_bounds, "landmark " + std::to_string(i) + " rounds to (" + std::to_string(col) + ", " +
                                          std::to_string(row) + ") outside " + std::to_string(width) + "x" +
                                          std::to_string(height));
        }
        out.values.at(i, static_cast<int>(row), static_cast<int>(col)) = 1.0;
    }
    return out;
}

namespace {

void require_tag(const HeatmapStack& s, ScaleTag want, const char* op) {
    if (s.scale != want) {
        fail(Errc::wrong_scale, std::string(op) + " expects a " + to_string(want) + " stack, got " + to_string(s.scale));
    }
}

} // namespace

HeatmapStack to_diffusion_scale(const HeatmapStack& unit) {
    require_tag(unit, ScaleTag::unit, "to_diffusion_scale");
    HeatmapStack out{unit.values, ScaleTag::diffusion};
    for (auto& v : out.values.data) v = 2.0 * v - 1.0;
    return out;
}

HeatmapStack to_unit_scale(const HeatmapStack& diffusion) {
    require_tag(diffusion, ScaleTag::diffusion, "to_unit_scale");
    HeatmapStack out{diffusion.values, ScaleTag::unit};
    for (auto& v : out.values.data) v = (v + 1.0) / 2.0;
    return out;
}

HeatmapStack spatial_softmax(const HeatmapStack& s) {
    HeatmapStack out{s.values, ScaleTag::probability};
    for (int c = 0; c < out.channels(); ++c) {
        auto ch = out.values.channel(c);
        double peak = -INFINITY;
        for (double v : ch) {
            if (!std::isfinite(v)) fail(Errc::non_finite, "spatial_softmax input is not finite");
            peak = std::max(peak, v);
        }
        double total = 0.0;
        for (auto& v : ch) {
            v = std::exp(v - peak);
            total += v;
        }
        for (auto& v : ch) v /= total;
    }
    return out;
}

std::vector<double> gaussian_kernel_1d(int size, double sigma) {
    if (size < 1 || size % 2 == 0) fail(Errc::even_kernel, "kernel size must be odd, got " + std::to_string(size));
    if (!(sigma >= 0.0)) fail(Errc::negative_sigma, "kernel sigma must be >= 0");
    const int r = size / 2;
    std::vector<double> k(size, 0.0);
    if (sigma == 0.0) {
        k[r] = 1.0;
        return k;
    }
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        total += k[i + r];
    }
    for (auto& v : k) v /= total;
    return k;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0) fail(Errc::even_kernel, "kernel size must be odd, got " + std::to_string(size));
    if (!(sigma >= 0.0)) fail(Errc::negative_sigma, "kernel sigma must be >= 0");
    const int r = size / 2;
    std::vector<double> k(static_cast<std::size_t>(size) * size, 0.0);
    if (sigma == 0.0) {
        k[static_cast<std::size_t>(r) * size + r] = 1.0;
        return k;
    }
    double total = 0.0;
    for (int a = -r; a <= r; ++a) {
        for (int b = -r; b <= r; ++b) {
            const double v = std::exp(-(a * a + b * b) / (2.0 * sigma * sigma));
            k[static_cast<std::size_t>(a + r) * size + (b + r)] = v;
            total += v;
        }
    }
    for (auto& v : k) v /= total;
    return k;
}

void blur_in_place(Tensor& t, double sigma, int kernel_size) {
    if (!(sigma >= 0.0)) fail(Errc::negative_sigma, "blur sigma must be >= 0");
    const auto k = gaussian_kernel_1d(kernel_size, sigma);
    if (sigma == 0.0 || t.empty()) return;

    // The 2-D kernel is the outer product of the 1-D one and replicate padding
    // clamps each axis independently, so two 1-D passes are exact.
    const int r = kernel_size / 2;
    const int h = t.height;
    const int w = t.width;
    std::vector<double> tmp(t.plane());
    for (int c = 0; c < t.channels; ++c) {
        auto ch = t.channel(c);
        for (int y = 0; y < h; ++y) {
            const double* row = ch.data() + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * row[std::clamp(x + i, 0, w - 1)];
                tmp[static_cast<std::size_t>(y) * w + x] = acc;
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
                ch[static_cast<std::size_t>(y) * w + x] = acc;
            }
        }
    }
}

HeatmapStack blur(const HeatmapStack& s, double sigma, int kernel_size) {
    HeatmapStack out = s;
    blur_in_place(out.values, sigma, kernel_size);
    return out;
}

LandmarkSet extract_landmarks(const HeatmapStack& s, Frame frame, Spacing spacing) {
    if (s.channels() < 1 || s.values.plane() == 0) fail(Errc::empty_stack, "extract_landmarks on an empty stack");
    LandmarkSet out;
    out.frame = frame;
    out.spacing_mm = spacing;
    out.points.reserve(s.channels());
    for (int c = 0; c < s.channels(); ++c) {
        const auto ch = s.values.channel(c);
        // max_element returns the first maximum, i.e. the lowest row-major index.
        const auto idx = static_cast<int>(std::max_element(ch.begin(), ch.end()) - ch.begin());
        out.points.push_back({static_cast<double>(idx % s.width()), static_cast<double>(idx / s.width())});
    }
    return out;
}

void write_sphm(std::ostream& os, const HeatmapStack& s) {
    os.write("SPHM", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(s.channels()));
    detail::put_u32(os, static_cast<std::uint32_t>(s.height()));
    detail::put_u32(os, static_cast<std::uint32_t>(s.width()));
    for (double v : s.values.data) detail::put_f32(os, static_cast<float>(v));
    os.put(static_cast<char>(s.scale));
    if (!os) fail(Errc::io, "failed writing SPHM stream");
}

HeatmapStack read_sphm(std::istream& is) {
    detail::expect_magic(is, "SPHM");
    const auto n = detail::get_u32(is);
    const auto h = detail::get_u32(is);
    const auto w = detail::get_u32(is);
    if (static_cast<std::uint64_t>(n) * h * w > (1ull << 32)) fail(Errc::io, "SPHM dimensions too large");
    HeatmapStack s{Tensor(static_cast<int>(n), static_cast<int>(h), static_cast<int>(w)), ScaleTag::raw};
    for (auto& v : s.values.data) v = detail::get_f32(is);
    char tag = 0;
    detail::read_exact(is, &tag, 1);
    if (static_cast<unsigned char>(tag) > 3) fail(Errc::io, "SPHM scale tag out of range");
    s.scale = static_cast<ScaleTag>(tag);
    return s;
}

void write_sphm(const std::filesystem::path& path, const HeatmapStack& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    write_sphm(os, s);
}

HeatmapStack read_sphm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(Errc::missing_file, "cannot open " + path.string());
    return read_sphm(is);
}

} // namespace saltpepper
