#include "saltpepper/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "saltpepper/error.hpp"

namespace saltpepper {

namespace {

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

void check_symmetric(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(Errc::invalid_range, std::string(name) + " must be a finite value >= 0");
}

void check_interval(Interval i, const char* name) {
    if (!(i.lo <= i.hi) || !std::isfinite(i.lo) || !std::isfinite(i.hi)) {
        fail(Errc::invalid_range, std::string(name) + " needs lo <= hi");
    }
}

double uniform(Rng& rng, double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace

void AugmentConfig::validate() const {
    check_symmetric(rotation_deg, "augment.rotation_deg");
    check_symmetric(translate_px, "augment.translate_px");
    check_symmetric(shear_deg, "augment.shear_deg");
    check_symmetric(value_mult, "augment.value_mult");
    check_symmetric(elastic_alpha, "augment.elastic_alpha");
    check_interval(scale, "augment.scale");
    check_interval(gamma, "augment.gamma");
    if (scale.lo <= 0.0) fail(Errc::invalid_range, "augment.scale must be positive");
    if (gamma.lo <= 0.0) fail(Errc::invalid_range, "augment.gamma must be positive");
    if (value_mult > 1.0) fail(Errc::invalid_range, "augment.value_mult must be <= 1");
    if (elastic_alpha > 0.0 && !(elastic_sigma > 0.0)) fail(Errc::invalid_range, "augment.elastic_sigma must be > 0");
    if (!(cutout_max_frac >= 0.0 && cutout_max_frac <= 1.0)) {
        fail(Errc::invalid_range, "augment.cutout_max_frac must lie in [0, 1]");
    }
    if (max_redraws < 1) fail(Errc::invalid_range, "augment.max_redraws must be >= 1");
}

AugmentConfig AugmentConfig::identity() {
    AugmentConfig c;
    c.rotation_deg = 0.0;
    c.translate_px = 0.0;
    c.scale = {1.0, 1.0};
    c.shear_deg = 0.0;
    c.value_mult = 0.0;
    c.elastic_alpha = 0.0;
    c.cutout_max_frac = 0.0;
    c.gamma = {1.0, 1.0};
    return c;
}

Affine Affine::inverse() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) < 1e-12) fail(Errc::degenerate, "affine map is singular");
    Affine r;
    r.m[0] = m[4] / det;
    r.m[1] = -m[1] / det;
    r.m[3] = -m[3] / det;
    r.m[4] = m[0] / det;
    r.m[2] = -(r.m[0] * m[2] + r.m[1] * m[5]);
    r.m[5] = -(r.m[3] * m[2] + r.m[4] * m[5]);
    return r;
}

Affine Affine::translation(double tx, double ty) {
    Affine a;
    a.m[2] = tx;
    a.m[5] = ty;
    return a;
}

Affine compose_affine(double rotation_deg, double shear_deg, double scale, double tx, double ty, Point center) {
    const double c = std::cos(deg2rad(rotation_deg));
    const double s = std::sin(deg2rad(rotation_deg));
    const double k = std::tan(deg2rad(shear_deg));
    // L = scale * R * [[1, k], [0, 1]]
    const double l00 = scale * c, l01 = scale * (c * k - s);
    const double l10 = scale * s, l11 = scale * (s * k + c);
    Affine a;
    a.m = {l00, l01, center.x - l00 * center.x - l01 * center.y + tx,
           l10, l11, center.y - l10 * center.x - l11 * center.y + ty};
    return a;
}

AffineDraw draw_affine_params(const AugmentConfig& cfg, Rng& rng) {
    AffineDraw d;
    d.rotation_deg = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg);
    d.shear_deg = uniform(rng, -cfg.shear_deg, cfg.shear_deg);
    d.scale = uniform(rng, cfg.scale.lo, cfg.scale.hi);
    d.tx = uniform(rng, -cfg.translate_px, cfg.translate_px);
    d.ty = uniform(rng, -cfg.translate_px, cfg.translate_px);
    return d;
}

Affine random_affine(const AugmentConfig& cfg, int height, int width, Rng& rng) {
    const auto d = draw_affine_params(cfg, rng);
    return compose_affine(d.rotation_deg, d.shear_deg, d.scale, d.tx, d.ty,
                          {(width - 1) / 2.0, (height - 1) / 2.0});
}

double sample_bilinear(const Tensor& img, int channel, double x, double y) noexcept {
    x = std::clamp(x, 0.0, img.width - 1.0);
    y = std::clamp(y, 0.0, img.height - 1.0);
    const int x0 = std::min(static_cast<int>(x), img.width - 1);
    const int y0 = std::min(static_cast<int>(y), img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0, fy = y - y0;
    const double top = img.at(channel, y0, x0) * (1 - fx) + img.at(channel, y0, x1) * fx;
    const double bot = img.at(channel, y1, x0) * (1 - fx) + img.at(channel, y1, x1) * fx;
    return top * (1 - fy) + bot * fy;
}

Point DisplacementField::at(Point p) const { return {sample_bilinear(d, 0, p.x, p.y), sample_bilinear(d, 1, p.x, p.y)}; }

DisplacementField elastic_field(int height, int width, double alpha, double sigma, Rng& rng) {
    if (height <= 0 || width <= 0) fail(Errc::degenerate, "elastic field needs a non-empty frame");
    if (!(alpha >= 0.0)) fail(Errc::invalid_range, "elastic alpha must be >= 0");
    if (!(sigma > 0.0)) fail(Errc::invalid_range, "elastic sigma must be > 0");
    // Noise is drawn on a grid padded by the kernel radius so every kept pixel is
    // smoothed over a full neighbourhood; the field statistics then do not depend
    // on the frame size. Only the kept window is convolved.
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    const auto k = gaussian_kernel_1d(2 * r + 1, sigma);
    const int ph = height + 2 * r, pw = width + 2 * r;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> noise(static_cast<std::size_t>(ph) * pw);
    std::vector<double> rows(static_cast<std::size_t>(ph) * width);
    auto f = DisplacementField::zeros(height, width);
    for (int c = 0; c < 2; ++c) {
        for (auto& v : noise) v = u(rng);
        for (int y = 0; y < ph; ++y) {
            const double* src = noise.data() + static_cast<std::size_t>(y) * pw;
            double* dst = rows.data() + static_cast<std::size_t>(y) * width;
            for (int x = 0; x < width; ++x) {
                double acc = 0.0;
                for (int i = 0; i <= 2 * r; ++i) acc += k[i] * src[x + i];
                dst[x] = acc;
            }
        }
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double acc = 0.0;
                for (int i = 0; i <= 2 * r; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * width + x];
                f.d.at(c, y, x) = alpha * acc;
            }
        }
    }
    return f;
}

namespace {

template <class SourceOf>
Tensor resample(const Tensor& img, SourceOf source) {
    Tensor out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const Point s = source(x, y);
            for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = sample_bilinear(img, c, s.x, s.y);
        }
    }
    return out;
}

void check_field(const Tensor& img, const DisplacementField& f) {
    if (f.d.channels != 2 || f.d.height != img.height || f.d.width != img.width) {
        fail(Errc::shape_mismatch, "displacement field " + f.d.shape_string() + " does not match image " +
                                       img.shape_string());
    }
    for (double v : f.d.data) {
        if (!std::isfinite(v)) fail(Errc::non_finite, "displacement field has non-finite entries");
    }
}

} // namespace

Tensor warp_image(const Tensor& img, const Affine& a) {
    const Affine inv = a.inverse();
    return resample(img, [&](int x, int y) { return inv.apply({double(x), double(y)}); });
}

Tensor warp_image(const Tensor& img, const DisplacementField& f) {
    check_field(img, f);
    return resample(img, [&](int x, int y) {
        return Point{x - f.d.at(0, y, x), y - f.d.at(1, y, x)};
    });
}

Tensor warp_image(const Tensor& img, const Affine& a, const DisplacementField& f) {
    check_field(img, f);
    const Affine inv = a.inverse();
    return resample(img, [&](int x, int y) {
        return inv.apply({x - f.d.at(0, y, x), y - f.d.at(1, y, x)});
    });
}

LandmarkSet warp_landmarks(const LandmarkSet& lm, const Affine& a) {
    LandmarkSet out = lm;
    for (auto& p : out.points) p = a.apply(p);
    return out;
}

LandmarkSet warp_landmarks(const LandmarkSet& lm, const DisplacementField& f) {
    LandmarkSet out = lm;
    for (auto& p : out.points) {
        const Point d = f.at(p);
        p = {p.x + d.x, p.y + d.y};
    }
    return out;
}

LandmarkSet warp_landmarks(const LandmarkSet& lm, const Affine& a, const DisplacementField& f) {
    return warp_landmarks(warp_landmarks(lm, a), f);
}

bool inside_frame(const LandmarkSet& lm) noexcept {
    return std::all_of(lm.points.begin(), lm.points.end(), [&](const Point& p) {
        return p.x >= 0.0 && p.y >= 0.0 && p.x <= lm.frame.width - 1.0 && p.y <= lm.frame.height - 1.0;
    });
}

PhotometricDraw draw_photometric(const AugmentConfig& cfg, int height, int width, Rng& rng) {
    PhotometricDraw d;
    d.factor = uniform(rng, 1.0 - cfg.value_mult, 1.0 + cfg.value_mult);
    d.gamma = uniform(rng, cfg.gamma.lo, cfg.gamma.hi);
    const double area = uniform(rng, 0.0, cfg.cutout_max_frac) * height * width;
    const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
    const int cw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 0, width);
    const int ch = cw > 0 ? std::clamp(static_cast<int>(area / cw), 0, height) : 0;
    d.cutout.width = ch > 0 ? cw : 0;
    d.cutout.height = cw > 0 ? ch : 0;
    d.cutout.x = std::uniform_int_distribution<int>(0, width - d.cutout.width)(rng);
    d.cutout.y = std::uniform_int_distribution<int>(0, height - d.cutout.height)(rng);
    return d;
}

Tensor apply_photometric(const Tensor& img, const PhotometricDraw& d) {
    Tensor out = img;
    if (d.factor != 1.0 || d.gamma != 1.0) {
        for (auto& v : out.data) {
            const double u = std::clamp((v + 1.0) / 2.0 * d.factor, 0.0, 1.0);
            v = 2.0 * (d.gamma == 1.0 ? u : std::pow(u, d.gamma)) - 1.0;
        }
    }
    if (d.cutout.width > 0 && d.cutout.height > 0) {
        for (int c = 0; c < out.channels; ++c) {
            double mean = 0.0;
            for (double v : out.channel(c)) mean += v;
            mean /= static_cast<double>(out.plane());
            for (int y = d.cutout.y; y < d.cutout.y + d.cutout.height; ++y) {
                for (int x = d.cutout.x; x < d.cutout.x + d.cutout.width; ++x) out.at(c, y, x) = mean;
            }
        }
    }
    for (auto& v : out.data) v = std::clamp(v, -1.0, 1.0);
    return out;
}

Tensor photometric(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
    return apply_photometric(img, draw_photometric(cfg, img.height, img.width, rng));
}

AugmentedSample augment(const ReferenceImage& image, const LandmarkSet& lm, const AugmentConfig& cfg, Rng& rng) {
    const int h = image.height(), w = image.width();
    for (int attempt = 1; attempt <= cfg.max_redraws; ++attempt) {
        const Affine a = random_affine(cfg, h, w, rng);
        const bool elastic = cfg.elastic_alpha > 0.0;
        const auto field = elastic ? elastic_field(h, w, cfg.elastic_alpha, cfg.elastic_sigma, rng)
                                   : DisplacementField::zeros(h, w);
        LandmarkSet moved = warp_landmarks(lm, a, field);
        if (!inside_frame(moved)) continue;
        AugmentedSample s;
        s.image.pixels = photometric(warp_image(image.pixels, a, field), cfg, rng);
        s.landmarks = std::move(moved);
        s.attempts = attempt;
        return s;
    }
    fail(Errc::rejection_exhausted,
         "no geometric draw kept every landmark in frame after " + std::to_string(cfg.max_redraws) + " tries");
}

} // namespace saltpepper
