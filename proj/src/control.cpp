// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/control.hpp>

#include <algorithm>
#include <numeric>

namespace handsplat {

namespace {

constexpr double kBaryMin = 1e-4;
constexpr double kOffsetRatioMin = 1e-4;
constexpr double kOffsetRatioMax = 0.999;

Vec3 clamp_bary(const Vec3 &b) {
    Vec3 c = b.cwiseMax(kBaryMin);
    return c / c.sum();
}

Vec3 bary_to_logits(const Vec3 &b) {
    const Vec3 c = clamp_bary(b);
    return Vec3(std::log(c.x()), std::log(c.y()), std::log(c.z()));
}

double max_scale(const SurfaceGaussian &g) { return std::exp(g.log_scales.maxCoeff()); }

// Barycentric coordinates of the projection of p onto the plane of (a, b, c).
Vec3 plane_bary(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
    const Vec3 e1 = b - a, e2 = c - a, d = p - a;
    const double d11 = e1.dot(e1), d12 = e1.dot(e2), d22 = e2.dot(e2);
    const double r1 = d.dot(e1), r2 = d.dot(e2);
    const double det = d11 * d22 - d12 * d12;
    const double v = (d22 * r1 - d12 * r2) / det;
    const double w = (d11 * r2 - d12 * r1) / det;
    return Vec3(1.0 - v - w, v, w);
}

double median_edge(const DeformedMesh &canonical) {
    return median_edge_length(canonical.vertices, canonical.faces);
}

} // namespace

void ControlConfig::validate() const {
    if (control_interval <= 0)
        throw ConfigError("control_interval must be positive");
    if (!(grad_threshold > 0.0))
        throw ConfigError("grad_threshold must be positive");
    if (split_scale_threshold < 0.0)
        throw ConfigError("split_scale_threshold must be non-negative");
    if (!(prune_opacity > 0.0 && prune_opacity < 1.0))
        throw ConfigError("prune_opacity must lie in (0, 1)");
    if (!(max_scale_factor > 0.0))
        throw ConfigError("max_scale_factor must be positive");
    if (min_gaussians < 1 || max_gaussians < min_gaussians)
        throw ConfigError("max_gaussians must be at least min_gaussians");
    if (!(split_factor > 1.0))
        throw ConfigError("split_factor must exceed 1");
}

ControlResult densify(const SurfaceGaussianSet &set, const GradStats &stats, const DeformedMesh &canonical,
                      const ControlConfig &cfg, Rng &rng, ControlReport *report) {
    if (stats.accum.size() != set.size() || stats.count.size() != set.size())
        throw DimensionError("gradient statistics do not match the Gaussian set");
    ControlResult out;
    out.set = set;
    out.provenance.resize(set.size());
    std::iota(out.provenance.begin(), out.provenance.end(), 0);

    std::vector<int> candidates;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (stats.mean(i) > cfg.grad_threshold)
            candidates.push_back(static_cast<int>(i));
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a, int b) { return stats.mean(a) > stats.mean(b); });

    const double splitThreshold =
        cfg.split_scale_threshold > 0.0 ? cfg.split_scale_threshold : 1.5 * median_edge(canonical);
    long capacity = static_cast<long>(cfg.max_gaussians) - static_cast<long>(set.size());
    for (int i : candidates) {
        if (capacity <= 0)
            break;
        --capacity;
        const SurfaceGaussian &g = set[i];
        if (max_scale(g) <= splitThreshold) {
            out.set.push_back(g);
            out.provenance.push_back(i);
            if (report)
                ++report->clones;
            continue;
        }
        // Split: two children sampled from the parent's tangent-plane Gaussian.
        const auto [a, b, c] = canonical.triangle(g.face_id);
        const FaceFrame &fr = canonical.face_frames[g.face_id];
        const Vec3 w = barycentric_weights(g.bary_logits);
        const Vec3 mean = w[0] * a + w[1] * b + w[2] * c;
        const Vec3 tu = std::cos(g.rotation_phi) * fr.u + std::sin(g.rotation_phi) * fr.v;
        const Vec3 tv = -std::sin(g.rotation_phi) * fr.u + std::cos(g.rotation_phi) * fr.v;
        const Vec2 s = g.log_scales.array().exp().matrix();
        for (int k = 0; k < 2; ++k) {
            SurfaceGaussian child = g;
            const Vec3 p = mean + s.x() * rng.normal() * tu + s.y() * rng.normal() * tv;
            child.bary_logits = bary_to_logits(plane_bary(p, a, b, c));
            child.log_scales = g.log_scales.array() - std::log(cfg.split_factor);
            if (k == 0) {
                out.set[i] = child;
            } else {
                out.set.push_back(child);
                out.provenance.push_back(i);
            }
        }
        if (report)
            ++report->splits;
    }
    return out;
}

ControlResult prune(const SurfaceGaussianSet &set, const DeformedMesh &canonical, const ControlConfig &cfg,
                    ControlReport *report) {
    const double cap = cfg.max_scale_factor * median_edge(canonical);
    std::vector<int> doomed;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (sigmoid(set[i].opacity_logit) < cfg.prune_opacity || max_scale(set[i]) > cap)
            doomed.push_back(static_cast<int>(i));
    const long room = std::max(0L, static_cast<long>(set.size()) - cfg.min_gaussians);
    if (static_cast<long>(doomed.size()) > room) {
        std::stable_sort(doomed.begin(), doomed.end(), [&](int a, int b) {
            return set[a].opacity_logit < set[b].opacity_logit;
        });
        doomed.resize(static_cast<std::size_t>(room));
        if (report)
            ++report->floor_warnings;
    }
    std::vector<std::uint8_t> drop(set.size(), 0);
    for (int i : doomed)
        drop[i] = 1;
    ControlResult out;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (!drop[i]) {
            out.set.push_back(set[i]);
            out.provenance.push_back(static_cast<int>(i));
        }
    if (report)
        report->prunes += static_cast<int>(doomed.size());
    return out;
}

ControlResult reassign(const SurfaceGaussianSet &set, const DeformedMesh &canonical, double zMax,
                       ControlReport *report) {
    const TriangleLocator locator(canonical.vertices, canonical.faces, canonical.degenerate);
    ControlResult out;
    out.set = set;
    out.provenance.resize(set.size());
    std::iota(out.provenance.begin(), out.provenance.end(), 0);
    for (auto &g : out.set) {
        const int originalFace = g.face_id;
        bool clamped = false;
        for (int pass = 0; pass < 4; ++pass) {
            const Vec3 anchor = canonical_anchor(g, canonical, zMax);
            const TriangleHit hit = locator.closest(anchor);
            if (hit.face < 0)
                throw DegenerateTriangleError("canonical mesh has no usable face");
            const Vec3 w = barycentric_weights(g.bary_logits);
            const double offset = normal_offset(g.offset_logit, zMax);
            if (hit.face == g.face_id && (clamp_bary(hit.bary) - w).cwiseAbs().maxCoeff() < 1e-9 &&
                std::abs(hit.distance - offset) < 1e-12)
                break;
            if (hit.face != g.face_id) {
                const FaceFrame &from = canonical.face_frames[g.face_id];
                const FaceFrame &to = canonical.face_frames[hit.face];
                const Vec3 t = std::cos(g.rotation_phi) * from.u + std::sin(g.rotation_phi) * from.v;
                const double x = t.dot(to.u), y = t.dot(to.v);
                if (std::hypot(x, y) > 1e-12)
                    g.rotation_phi = std::atan2(y, x);
            }
            g.face_id = hit.face;
            g.bary_logits = bary_to_logits(hit.bary);
            double ratio = hit.distance / zMax;
            if (ratio > kOffsetRatioMax) {
                ratio = kOffsetRatioMax;
                clamped = true;
            }
            g.offset_logit = logit(std::max(ratio, kOffsetRatioMin));
        }
        if (report) {
            if (g.face_id != originalFace)
                ++report->reassigned;
            if (clamped)
                ++report->clamp_warnings;
        }
    }
    return out;
}

ControlResult control_cycle(const SurfaceGaussianSet &set, GradStats &stats, const DeformedMesh &canonical,
                            const ControlConfig &cfg, double zMax, Rng &rng, ControlReport *report) {
    const ControlResult d = densify(set, stats, canonical, cfg, rng, report);
    const ControlResult p = prune(d.set, canonical, cfg, report);
    ControlResult r = reassign(p.set, canonical, zMax, report);
    for (std::size_t i = 0; i < r.provenance.size(); ++i)
        r.provenance[i] = d.provenance[p.provenance[r.provenance[i]]];
    stats.reset(r.set.size());
    return r;
}

} // namespace handsplat
