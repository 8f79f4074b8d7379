// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Pinhole projection of world splats, the tile-based alpha compositor with its
// reverse pass, a brute-force reference compositor, and overlay compositing.
//
// Pixel (x, y) samples the image plane at (x, y): a splat whose projected mean
// equals (cx, cy) is centred on pixel (cx, cy) when the principal point is integral.
#pragma once

#include <handsplat/image.hpp>
#include <handsplat/surfgauss.hpp>

#include <optional>
#include <span>
#include <vector>

namespace handsplat {

/// Rectified pinhole camera; world_to_camera maps world points into an
/// x-right, y-down, z-forward camera frame.
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
    int width = 1, height = 1;
    RigidTransform world_to_camera;

    void validate() const;
    /// Same view at `factor` times the resolution.
    Camera scaled(double factor) const;
};

struct ScreenSplat {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity(); // pixels^2, already regularized
    double depth = 1.0;
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
};

enum class Precision { f32, f64 };

struct RenderSettings {
    double alpha_max = 0.99;
    double transmittance_min = 1e-4;
    int tile_size = 16;
    double cov_epsilon = 0.3; // px^2 added to the projected covariance diagonal
    double near_plane = 0.01; // meters
    /// Footprint cutoff of the tiled compositor: a splat is skipped where its
    /// alpha would fall below this value. The reference compositor has no cutoff.
    double alpha_cutoff = 1e-10;
    int threads = 1;
    Precision precision = Precision::f64;
};

/// Footprint radius in standard deviations at which opacity * exp(-r^2/2) reaches
/// the alpha cutoff; 0 when the splat never exceeds it.
double footprint_sigmas(double opacity, const RenderSettings &settings);

/// Projects a world-space Gaussian (center, 3x3 covariance). Returns nullopt when the
/// splat is behind the near plane or its footprint lies entirely off-screen.
std::optional<ScreenSplat> project_gaussian(const Camera &cam, const Vec3 &center, const Mat3 &covariance,
                                            const Vec3 &color, double opacity,
                                            const RenderSettings &settings);

std::optional<ScreenSplat> project_splat(const Camera &cam, const WorldSplat &splat, const Vec3 &color,
                                         const RenderSettings &settings);

struct ProjectionGradient {
    Vec3 center = Vec3::Zero();
    Mat3 covariance = Mat3::Zero();
};

/// Reverse pass of project_gaussian for an unculled splat.
ProjectionGradient project_gaussian_backward(const Camera &cam, const Vec3 &center, const Mat3 &covariance,
                                             const Vec2 &gradMean, const Mat2 &gradCov);

/// Unclamped premultiplied radiance over black plus coverage alpha.
struct RenderedImage {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;   // interleaved, 3 per pixel
    std::vector<double> alpha; // 1 per pixel

    RenderedImage() = default;
    RenderedImage(int w, int h)
        : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0),
          alpha(static_cast<std::size_t>(w) * h, 0.0) {}

    Image color() const;
    /// RGB clamped to [0, 1].
    Image clamped_color() const;
    Image rgba() const;
};

/// Tiled front-to-back compositor. Splats are globally sorted by depth (ties by
/// input index) and binned into tiles by their footprint.
RenderedImage rasterize(std::span<const ScreenSplat> splats, const Camera &cam,
                        const RenderSettings &settings);

/// Per pixel loop over every sorted splat; no tiling and no footprint cutoff.
RenderedImage rasterize_reference(std::span<const ScreenSplat> splats, const Camera &cam,
                                  const RenderSettings &settings);

struct SplatGradient {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Zero(); // symmetric
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
};

/// Reverse pass of rasterize (f64). gradAlpha may be empty.
std::vector<SplatGradient> rasterize_backward(std::span<const ScreenSplat> splats, const Camera &cam,
                                              const RenderSettings &settings,
                                              std::span<const double> gradRgb,
                                              std::span<const double> gradAlpha = {});

/// Background where objectMask is set; otherwise alpha-blend of the render.
Image composite_overlay(const RenderedImage &rendered, const Image &background, const Image &objectMask);

} // namespace handsplat
