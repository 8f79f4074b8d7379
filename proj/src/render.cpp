// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/parallel.hpp>
#include <handsplat/render.hpp>


#include <algorithm>
#include <numeric>
#include <string>

namespace handsplat {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw DomainError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0)
        throw DomainError("camera image size must be positive");
    if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
        throw DomainError("camera principal point must lie inside the image");
}

Camera Camera::scaled(double factor) const {
    Camera out = *this;
    out.fx *= factor;
    out.fy *= factor;
    out.cx *= factor;
    out.cy *= factor;
    out.width = static_cast<int>(std::lround(width * factor));
    out.height = static_cast<int>(std::lround(height * factor));
    return out;
}

double footprint_sigmas(double opacity, const RenderSettings &settings) {
    if (!(opacity > settings.alpha_cutoff))
        return 0.0;
    return std::sqrt(2.0 * std::log(opacity / settings.alpha_cutoff));
}

std::optional<ScreenSplat> project_gaussian(const Camera &cam, const Vec3 &center, const Mat3 &covariance,
                                            const Vec3 &color, double opacity,
                                            const RenderSettings &settings) {
    const Vec3 p = cam.world_to_camera.apply(center);
    if (!(p.z() > settings.near_plane))
        return std::nullopt;
    const double iz = 1.0 / p.z();
    ScreenSplat s;
    s.mean2d = Vec2(cam.fx * p.x() * iz + cam.cx, cam.fy * p.y() * iz + cam.cy);
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
    const Mat3 &r = cam.world_to_camera.rotation;
    const Mat3 w = r * covariance * r.transpose();
    s.cov2d = j * w * j.transpose();
    s.cov2d(0, 1) = s.cov2d(1, 0) = 0.5 * (s.cov2d(0, 1) + s.cov2d(1, 0));
    s.cov2d(0, 0) += settings.cov_epsilon;
    s.cov2d(1, 1) += settings.cov_epsilon;
    s.depth = p.z();
    s.color = color;
    s.opacity = opacity;

    const double k = footprint_sigmas(opacity, settings);
    if (k <= 0.0)
        return std::nullopt;
    const double rx = k * std::sqrt(s.cov2d(0, 0)), ry = k * std::sqrt(s.cov2d(1, 1));
    if (s.mean2d.x() + rx < 0.0 || s.mean2d.x() - rx > cam.width - 1.0 || s.mean2d.y() + ry < 0.0 ||
        s.mean2d.y() - ry > cam.height - 1.0)
        return std::nullopt;
    return s;
}

std::optional<ScreenSplat> project_splat(const Camera &cam, const WorldSplat &splat, const Vec3 &color,
                                         const RenderSettings &settings) {
    return project_gaussian(cam, splat.center, splat.covariance(), color, splat.opacity, settings);
}

ProjectionGradient project_gaussian_backward(const Camera &cam, const Vec3 &center, const Mat3 &covariance,
                                             const Vec2 &gradMean, const Mat2 &gradCov) {
    const Mat3 &r = cam.world_to_camera.rotation;
    const Vec3 p = cam.world_to_camera.apply(center);
    const double x = p.x(), y = p.y(), z = p.z(), iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * iz, 0.0, -cam.fx * x * iz2, 0.0, cam.fy * iz, -cam.fy * y * iz2;
    const Mat3 w = r * covariance * r.transpose();
    const Mat2 g = 0.5 * (gradCov + gradCov.transpose());

    Vec3 dp(gradMean.x() * cam.fx * iz, gradMean.y() * cam.fy * iz,
            -(gradMean.x() * cam.fx * x + gradMean.y() * cam.fy * y) * iz2);
    const Eigen::Matrix<double, 2, 3> dj = 2.0 * g * j * w;
    dp.x() += dj(0, 2) * (-cam.fx * iz2);
    dp.y() += dj(1, 2) * (-cam.fy * iz2);
    dp.z() += dj(0, 0) * (-cam.fx * iz2) + dj(0, 2) * (2.0 * cam.fx * x * iz3) + dj(1, 1) * (-cam.fy * iz2) +
              dj(1, 2) * (2.0 * cam.fy * y * iz3);
    const Mat3 dw = j.transpose() * g * j;

    ProjectionGradient out;
    out.center = r.transpose() * dp;
    out.covariance = r.transpose() * dw * r;
    return out;
}

Image RenderedImage::color() const {
    Image img(width, height, 3);
    img.data = rgb;
    return img;
}

Image RenderedImage::clamped_color() const {
    Image img = color();
    for (double &v : img.data)
        v = std::clamp(v, 0.0, 1.0);
    return img;
}

Image RenderedImage::rgba() const {
    Image img(width, height, 4);
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        for (int c = 0; c < 3; ++c)
            img.data[i * 4 + c] = std::clamp(rgb[i * 3 + c], 0.0, 1.0);
        img.data[i * 4 + 3] = std::clamp(alpha[i], 0.0, 1.0);
    }
    return img;
}

namespace {

void check_finite(std::span<const ScreenSplat> splats) {
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto &s = splats[i];
        if (!s.mean2d.allFinite() || !s.cov2d.allFinite() || !std::isfinite(s.depth) ||
            !s.color.allFinite() || !std::isfinite(s.opacity))
            throw RenderError("splat " + std::to_string(i) + " has non-finite parameters");
        if (!(s.cov2d.determinant() > 0.0) || !(s.cov2d(0, 0) > 0.0))
            throw RenderError("splat " + std::to_string(i) + " covariance is not positive definite");
    }
}

std::vector<int> depth_order(std::span<const ScreenSplat> splats) {
    std::vector<int> order(splats.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return splats[a].depth < splats[b].depth; });
    return order;
}

template <typename Real>
struct PackedSplat {
    Real mx, my;
    Real a, b, c; // conic: power = -0.5 (a dx^2 + 2 b dx dy + c dy^2)
    Real opacity;
    Real r, g, bl;
    Real minPower; // powers below this fall under the alpha cutoff
};

template <typename Real>
PackedSplat<Real> pack(const ScreenSplat &s, const RenderSettings &settings) {
    const Mat2 conic = s.cov2d.inverse();
    const double k = footprint_sigmas(s.opacity, settings);
    return {static_cast<Real>(s.mean2d.x()), static_cast<Real>(s.mean2d.y()), static_cast<Real>(conic(0, 0)),
            static_cast<Real>(0.5 * (conic(0, 1) + conic(1, 0))), static_cast<Real>(conic(1, 1)),
            static_cast<Real>(s.opacity), static_cast<Real>(s.color.x()), static_cast<Real>(s.color.y()),
            static_cast<Real>(s.color.z()), static_cast<Real>(-0.5 * k * k)};
}

struct FootprintBox {
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel range; empty when x0 > x1
};

FootprintBox footprint_box(const ScreenSplat &s, const Camera &cam, const RenderSettings &settings) {
    FootprintBox b;
    const double k = footprint_sigmas(s.opacity, settings);
    if (k <= 0.0)
        return b;
    const double rx = k * std::sqrt(s.cov2d(0, 0)), ry = k * std::sqrt(s.cov2d(1, 1));
    b.x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - rx)));
    b.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.mean2d.x() + rx)));
    b.y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - ry)));
    b.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.mean2d.y() + ry)));
    if (b.x0 > b.x1 || b.y0 > b.y1)
        b = FootprintBox{};
    return b;
}

struct TileBins {
    int tilesX = 0, tilesY = 0;
    std::vector<std::vector<int>> lists; // sorted positions of overlapping splats
};

TileBins bin_splats(std::span<const FootprintBox> boxes, const Camera &cam, const RenderSettings &settings) {
    const int ts = std::max(1, settings.tile_size);
    TileBins bins;
    bins.tilesX = (cam.width + ts - 1) / ts;
    bins.tilesY = (cam.height + ts - 1) / ts;
    bins.lists.resize(static_cast<std::size_t>(bins.tilesX) * bins.tilesY);
    for (std::size_t pos = 0; pos < boxes.size(); ++pos) {
        const FootprintBox &b = boxes[pos];
        if (b.x0 > b.x1)
            continue;
        for (int ty = b.y0 / ts; ty <= b.y1 / ts; ++ty)
            for (int tx = b.x0 / ts; tx <= b.x1 / ts; ++tx)
                bins.lists[static_cast<std::size_t>(ty) * bins.tilesX + tx].push_back(static_cast<int>(pos));
    }
    return bins;
}

template <typename Real>
RenderedImage rasterize_tiled(std::span<const ScreenSplat> splats, const Camera &cam,
                              const RenderSettings &settings) {
    check_finite(splats);
    RenderedImage out(cam.width, cam.height);
    if (splats.empty())
        return out;
    const auto order = depth_order(splats);
    std::vector<PackedSplat<Real>> packed(order.size());
    std::vector<FootprintBox> boxes(order.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        packed[pos] = pack<Real>(splats[order[pos]], settings);
        boxes[pos] = footprint_box(splats[order[pos]], cam, settings);
    }
    const TileBins bins = bin_splats(boxes, cam, settings);
    const int ts = std::max(1, settings.tile_size);
    const Real alphaMax = static_cast<Real>(settings.alpha_max);
    const double tMin = settings.transmittance_min;

    // Splat-major within a tile: each splat touches only its footprint box, and a
    // pixel stops accumulating once its transmittance falls below the floor.
    parallel_for(bins.lists.size(), settings.threads, [&](std::size_t tile) {
        const auto &list = bins.lists[tile];
        if (list.empty())
            return;
        const int tx = static_cast<int>(tile % bins.tilesX), ty = static_cast<int>(tile / bins.tilesX);
        const int x0 = tx * ts, y0 = ty * ts;
        const int xEnd = std::min(cam.width, x0 + ts), yEnd = std::min(cam.height, y0 + ts);
        const int tw = xEnd - x0, th = yEnd - y0;
        // Accumulators stay in double; Real only sets the per-splat falloff precision.
        std::vector<double> tr(static_cast<std::size_t>(tw * th), 1.0);
        std::vector<double> col(static_cast<std::size_t>(tw * th) * 3, 0.0);
        int open = tw * th;
        for (int pos : list) {
            const PackedSplat<Real> &s = packed[pos];
            const FootprintBox &box = boxes[pos];
            // Mean relative to the tile origin keeps f32 offsets small.
            const ScreenSplat &src = splats[order[pos]];
            const Real mx = static_cast<Real>(src.mean2d.x() - x0), my = static_cast<Real>(src.mean2d.y() - y0);
            const int ya = std::max(y0, box.y0), yb = std::min(yEnd - 1, box.y1);
            const int xa = std::max(x0, box.x0), xb = std::min(xEnd - 1, box.x1);
            for (int y = ya; y <= yb; ++y) {
                const Real dy = static_cast<Real>(y - y0) - my;
                const std::size_t row = static_cast<std::size_t>(y - y0) * tw;
                // Row span of the cutoff ellipse, widened by a pixel against rounding.
                const Real disc = s.b * s.b * dy * dy - s.a * (s.c * dy * dy + Real(2) * s.minPower);
                if (disc < Real(0))
                    continue;
                const Real root = std::sqrt(disc), centre = static_cast<Real>(x0) + mx - s.b * dy / s.a;
                const int xl = std::max(xa, static_cast<int>(std::floor(centre - root / s.a)) - 1);
                const int xr = std::min(xb, static_cast<int>(std::ceil(centre + root / s.a)) + 1);
                for (int x = xl; x <= xr; ++x) {
                    const std::size_t i = row + static_cast<std::size_t>(x - x0);
                    double &t = tr[i];
                    if (t < tMin)
                        continue;
                    const Real dx = static_cast<Real>(x - x0) - mx;
                    const Real power = Real(-0.5) * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
                    if (power < s.minPower)
                        continue;
                    const Real alpha = std::min(alphaMax, s.opacity * std::exp(power));
                    const double w = static_cast<double>(alpha) * t;
                    col[i * 3 + 0] += w * s.r;
                    col[i * 3 + 1] += w * s.g;
                    col[i * 3 + 2] += w * s.bl;
                    t *= 1.0 - static_cast<double>(alpha);
                    if (t < tMin)
                        --open;
                }
            }
            if (open == 0)
                break;
        }
        for (int y = y0; y < yEnd; ++y)
            for (int x = x0; x < xEnd; ++x) {
                const std::size_t i = static_cast<std::size_t>(y - y0) * tw + (x - x0);
                const std::size_t idx = static_cast<std::size_t>(y) * cam.width + x;
                out.rgb[idx * 3 + 0] = col[i * 3 + 0];
                out.rgb[idx * 3 + 1] = col[i * 3 + 1];
                out.rgb[idx * 3 + 2] = col[i * 3 + 2];
                out.alpha[idx] = 1.0 - tr[i];
            }
    });
    return out;
}

} // namespace

RenderedImage rasterize(std::span<const ScreenSplat> splats, const Camera &cam,
                        const RenderSettings &settings) {
    if (settings.precision == Precision::f32)
        return rasterize_tiled<float>(splats, cam, settings);
    return rasterize_tiled<double>(splats, cam, settings);
}

RenderedImage rasterize_reference(std::span<const ScreenSplat> splats, const Camera &cam,
                                  const RenderSettings &settings) {
    check_finite(splats);
    RenderedImage out(cam.width, cam.height);
    const auto order = depth_order(splats);
    std::vector<Mat2> conics(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i)
        conics[i] = splats[i].cov2d.inverse();
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            for (int i : order) {
                const ScreenSplat &s = splats[i];
                const Vec2 d = Vec2(x, y) - s.mean2d;
                const double power = -0.5 * d.dot(conics[i] * d);
                const double alpha = std::min(settings.alpha_max, s.opacity * std::exp(power));
                c += alpha * t * s.color;
                t *= 1.0 - alpha;
                if (t < settings.transmittance_min)
                    break;
            }
            const std::size_t idx = static_cast<std::size_t>(y) * cam.width + x;
            for (int k = 0; k < 3; ++k)
                out.rgb[idx * 3 + k] = c[k];
            out.alpha[idx] = 1.0 - t;
        }
    return out;
}

std::vector<SplatGradient> rasterize_backward(std::span<const ScreenSplat> splats, const Camera &cam,
                                              const RenderSettings &settings,
                                              std::span<const double> gradRgb,
                                              std::span<const double> gradAlpha) {
    check_finite(splats);
    const std::size_t npix = static_cast<std::size_t>(cam.width) * cam.height;
    if (gradRgb.size() != npix * 3 || (!gradAlpha.empty() && gradAlpha.size() != npix))
        throw DimensionError("image gradient does not match the camera");
    std::vector<SplatGradient> grads(splats.size());
    if (splats.empty())
        return grads;
    const auto order = depth_order(splats);
    std::vector<PackedSplat<double>> packed(order.size());
    std::vector<FootprintBox> boxes(order.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        packed[pos] = pack<double>(splats[order[pos]], settings);
        boxes[pos] = footprint_box(splats[order[pos]], cam, settings);
    }
    const TileBins bins = bin_splats(boxes, cam, settings);
    const int ts = std::max(1, settings.tile_size);

    // Per tile, per list entry: d/d(mx, my, a, b, c, opacity, r, g, b).
    constexpr int kStride = 9;
    std::vector<std::vector<double>> tileGrads(bins.lists.size());

    parallel_for(bins.lists.size(), settings.threads, [&](std::size_t tile) {
        const auto &list = bins.lists[tile];
        if (list.empty())
            return;
        auto &acc = tileGrads[tile];
        acc.assign(list.size() * kStride, 0.0);
        const int tx = static_cast<int>(tile % bins.tilesX), ty = static_cast<int>(tile / bins.tilesX);
        const int xEnd = std::min(cam.width, (tx + 1) * ts), yEnd = std::min(cam.height, (ty + 1) * ts);
        struct Contribution {
            int entry;
            double alpha, g, power;
            bool clamped;
        };
        std::vector<Contribution> used;
        for (int y = ty * ts; y < yEnd; ++y)
            for (int x = tx * ts; x < xEnd; ++x) {
                used.clear();
                double t = 1.0;
                for (std::size_t e = 0; e < list.size(); ++e) {
                    const auto &s = packed[list[e]];
                    const double dx = x - s.mx, dy = y - s.my;
                    const double power = -0.5 * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
                    if (power < s.minPower)
                        continue;
                    const double g = std::exp(power);
                    const double raw = s.opacity * g;
                    const bool clamped = raw >= settings.alpha_max;
                    const double alpha = clamped ? settings.alpha_max : raw;
                    used.push_back({static_cast<int>(e), alpha, g, power, clamped});
                    t *= 1.0 - alpha;
                    if (t < settings.transmittance_min)
                        break;
                }
                if (used.empty())
                    continue;
                const std::size_t idx = static_cast<std::size_t>(y) * cam.width + x;
                const Vec3 gC(gradRgb[idx * 3], gradRgb[idx * 3 + 1], gradRgb[idx * 3 + 2]);
                const double gA = gradAlpha.empty() ? 0.0 : gradAlpha[idx];
                const double tFinal = t;
                double tAfter = tFinal;
                Vec3 behind = Vec3::Zero(); // sum over later splats of alpha_j T_j c_j
                for (auto it = used.rbegin(); it != used.rend(); ++it) {
                    const auto &s = packed[list[it->entry]];
                    const Vec3 col(s.r, s.g, s.bl);
                    const double oneMinus = 1.0 - it->alpha;
                    const double tBefore = tAfter / oneMinus;
                    double* a = &acc[static_cast<std::size_t>(it->entry) * kStride];
                    const double w = it->alpha * tBefore;
                    a[6] += gC.x() * w;
                    a[7] += gC.y() * w;
                    a[8] += gC.z() * w;
                    const double dAlpha = gC.dot(tBefore * col - behind / oneMinus) + gA * tFinal / oneMinus;
                    behind += w * col;
                    tAfter = tBefore;
                    if (it->clamped)
                        continue;
                    a[5] += dAlpha * it->g;
                    const double dPower = dAlpha * s.opacity * it->g;
                    const double dx = x - s.mx, dy = y - s.my;
                    a[2] += dPower * (-0.5 * dx * dx);
                    a[3] += dPower * (-dx * dy);
                    a[4] += dPower * (-0.5 * dy * dy);
                    // d(power)/d(mean) = (a dx + b dy, b dx + c dy)
                    a[0] += dPower * (s.a * dx + s.b * dy);
                    a[1] += dPower * (s.b * dx + s.c * dy);
                }
            }
    });

    // Deterministic reduction in tile order.
    std::vector<std::array<double, kStride>> perPos(order.size());
    for (auto &v : perPos)
        v.fill(0.0);
    for (std::size_t tile = 0; tile < bins.lists.size(); ++tile) {
        const auto &list = bins.lists[tile];
        const auto &acc = tileGrads[tile];
        for (std::size_t e = 0; e < list.size() && !acc.empty(); ++e)
            for (int k = 0; k < kStride; ++k)
                perPos[list[e]][k] += acc[e * kStride + k];
    }
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto &v = perPos[pos];
        const ScreenSplat &s = splats[order[pos]];
        SplatGradient &g = grads[order[pos]];
        g.mean2d = Vec2(v[0], v[1]);
        g.color = Vec3(v[6], v[7], v[8]);
        g.opacity = v[5];
        // conic = cov^-1, d(loss)/d(cov) = -conic G conic with G the conic gradient.
        Mat2 gConic;
        gConic << v[2], 0.5 * v[3], 0.5 * v[3], v[4];
        const Mat2 conic = s.cov2d.inverse();
        g.cov2d = -conic * gConic * conic;
    }
    return grads;
}

Image composite_overlay(const RenderedImage &rendered, const Image &background, const Image &objectMask) {
    if (background.width != rendered.width || background.height != rendered.height ||
        objectMask.width != rendered.width || objectMask.height != rendered.height)
        throw DimensionError("composite inputs differ in size");
    if (background.channels < 3 || objectMask.channels < 1)
        throw DimensionError("composite needs an RGB background and a mask");
    Image out(rendered.width, rendered.height, 3);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * out.width + x;
            const bool object = objectMask.at(x, y, 0) >= 0.5;
            const double a = std::clamp(rendered.alpha[idx], 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double bg = background.at(x, y, c);
                // rgb is premultiplied; blend the straight colour.
                const double straight = a > 0.0 ? std::clamp(rendered.rgb[idx * 3 + c] / a, 0.0, 1.0) : 0.0;
                out.at(x, y, c) = object ? bg : a * straight + (1.0 - a) * bg;
            }
        }
    return out;
}

} // namespace handsplat
