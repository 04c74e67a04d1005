#pragma once

#include <array>

#include "saltpepper/forward.hpp"
#include "saltpepper/heatmap.hpp"
#include "saltpepper/tensor.hpp"

namespace saltpepper {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct AugmentConfig {
    bool enabled = true;
    double rotation_deg = 3.0; // +-
    double translate_px = 10.0;
    Interval scale{0.95, 1.05};
    double shear_deg = 10.0;
    double value_mult = 0.5; // factor drawn in [1 - v, 1 + v]
    double elastic_alpha = 500.0;
    double elastic_sigma = 30.0;
    double cutout_max_frac = 0.3;
    Interval gamma{0.5, 2.0};
    int max_redraws = 10;

    void validate() const;
    /// Every transform at its neutral value.
    static AugmentConfig identity();
};

/// Forward point map p -> M * [x, y, 1]^T.
struct Affine {
    std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

    Point apply(Point p) const noexcept {
        return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
    }
    Affine inverse() const;

    static Affine translation(double tx, double ty);
};

/// scale * rotation * shear about `center`, followed by a translation.
Affine compose_affine(double rotation_deg, double shear_deg, double scale, double tx, double ty, Point center);

struct AffineDraw {
    double rotation_deg = 0.0;
    double shear_deg = 0.0;
    double scale = 1.0;
    double tx = 0.0;
    double ty = 0.0;
};

AffineDraw draw_affine_params(const AugmentConfig& cfg, Rng& rng);
Affine random_affine(const AugmentConfig& cfg, int height, int width, Rng& rng);

/// Per-pixel forward displacement (dx, dy), one plane each.
struct DisplacementField {
    Tensor d; // 2 x h x w

    static DisplacementField zeros(int height, int width) { return {Tensor(2, height, width)}; }
    /// Bilinear lookup with edge clamping.
    Point at(Point p) const;
};

/// Uniform(-1, 1) planes, Gaussian-smoothed with `sigma` and scaled by `alpha`.
/// Displacement std is about alpha * 0.163 / sigma regardless of the frame size.
DisplacementField elastic_field(int height, int width, double alpha, double sigma, Rng& rng);

/// Bilinear sample of every channel at (x, y), clamped to the edge.
double sample_bilinear(const Tensor& img, int channel, double x, double y) noexcept;

/// out(p) = img(A^-1 p)
Tensor warp_image(const Tensor& img, const Affine& a);
/// out(p) = img(p - D(p))
Tensor warp_image(const Tensor& img, const DisplacementField& f);
/// out(p) = img(A^-1 (p - D(p))): the affine first, then the elastic field.
Tensor warp_image(const Tensor& img, const Affine& a, const DisplacementField& f);

/// p -> A p
LandmarkSet warp_landmarks(const LandmarkSet& lm, const Affine& a);
/// p -> p + D(p)
LandmarkSet warp_landmarks(const LandmarkSet& lm, const DisplacementField& f);
LandmarkSet warp_landmarks(const LandmarkSet& lm, const Affine& a, const DisplacementField& f);

/// True when every point lies inside [0, w - 1] x [0, h - 1].
bool inside_frame(const LandmarkSet& lm) noexcept;

struct CutoutRect {
    int x = 0, y = 0, width = 0, height = 0;
};

struct PhotometricDraw {
    double factor = 1.0;
    double gamma = 1.0;
    CutoutRect cutout;
};

PhotometricDraw draw_photometric(const AugmentConfig& cfg, int height, int width, Rng& rng);
Tensor apply_photometric(const Tensor& img, const PhotometricDraw& draw);
Tensor photometric(const Tensor& img, const AugmentConfig& cfg, Rng& rng);

struct AugmentedSample {
    ReferenceImage image;
    LandmarkSet landmarks;
    int attempts = 1;
};

/// Geometric draw (affine + elastic), redrawn until every landmark stays in
/// frame, then photometric. Throws rejection_exhausted after max_redraws.
AugmentedSample augment(const ReferenceImage& image, const LandmarkSet& lm, const AugmentConfig& cfg, Rng& rng);

} // namespace saltpepper
