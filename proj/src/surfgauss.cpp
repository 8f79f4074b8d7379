// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/surfgauss.hpp>

#include <string>

namespace handsplat {

void validate_gaussians(const SurfaceGaussianSet &set, int faceCount) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto &g = set[i];
        if (g.face_id < 0 || g.face_id >= faceCount)
            throw DomainError("gaussian " + std::to_string(i) + " anchored to invalid face " +
                              std::to_string(g.face_id));
        const bool finite = g.bary_logits.allFinite() && g.log_scales.allFinite() &&
                            std::isfinite(g.rotation_phi) && std::isfinite(g.offset_logit) &&
                            g.albedo_logits.allFinite() && std::isfinite(g.opacity_logit);
        if (!finite)
            throw DomainError("gaussian " + std::to_string(i) + " has non-finite parameters");
    }
}

SurfaceGaussianSet initialize_gaussians(const DeformedMesh &canonical, const SurfaceSettings &settings) {
    SurfaceGaussianSet out;
    out.reserve(static_cast<std::size_t>(canonical.face_count() * settings.gaussians_per_face));
    for (int f = 0; f < canonical.face_count(); ++f) {
        if (canonical.degenerate[f])
            continue;
        const double s = settings.init_scale_factor * std::sqrt(canonical.face_areas[f]);
        SurfaceGaussian g;
        g.face_id = f;
        g.log_scales = Vec2::Constant(std::log(s));
        g.opacity_logit = logit(settings.init_opacity);
        g.albedo_logits = Vec3::Constant(logit(settings.init_albedo));
        for (int k = 0; k < settings.gaussians_per_face; ++k)
            out.push_back(g);
    }
    return out;
}

Vec3 barycentric_weights(const Vec3 &logits) {
    const double m = logits.maxCoeff();
    Vec3 w = (logits.array() - m).exp().matrix();
    return w / w.sum();
}

Mat2 edge_projection(const Vec3 &v1, const Vec3 &v2, const Vec3 &v3) {
    const Vec3 e1 = v2 - v1, e2 = v3 - v1;
    const FaceFrame fr = gram_schmidt_frame(e1, e2);
    Mat2 m;
    m << e1.dot(fr.u), e2.dot(fr.u), e1.dot(fr.v), e2.dot(fr.v);
    return m;
}

Mat2 deformation_gradient(const Mat2 &canon, const Mat2 &deform, double detEpsilon) {
    if (!(std::abs(canon.determinant()) > detEpsilon))
        throw DegenerateTriangleError("canonical edge matrix is singular");
    return deform * canon.inverse();
}

EllipseQuadratic ellipse_quadratic(const Vec2 &scales, double phi) {
    if (!(scales.x() > 0.0) || !(scales.y() > 0.0))
        throw DomainError("ellipse scales must be positive");
    const Mat2 r = rotation2(phi);
    const Vec2 inv(1.0 / (scales.x() * scales.x()), 1.0 / (scales.y() * scales.y()));
    return {r * inv.asDiagonal() * r.transpose()};
}

namespace {

double canonical_angle(Vec2 dir) {
    if (dir.x() < 0.0 || (dir.x() == 0.0 && dir.y() < 0.0))
        dir = -dir;
    double a = std::atan2(dir.y(), dir.x());
    if (a < 0.0)
        a += kPi;
    if (a >= kPi)
        a -= kPi;
    return a;
}

} // namespace

EllipseParams transform_ellipse(const EllipseQuadratic &q, const Mat2 &a, double referencePhi,
                                double detEpsilon) {
    if (!(std::abs(a.determinant()) > detEpsilon))
        throw DegenerateDeformationError("deformation gradient is singular");
    const Mat2 ainv = a.inverse();
    Mat2 qp = ainv.transpose() * q.q * ainv;
    const double off = 0.5 * (qp(0, 1) + qp(1, 0));
    qp(0, 1) = qp(1, 0) = off;

    const double mean = 0.5 * (qp(0, 0) + qp(1, 1));
    const double half = 0.5 * (qp(0, 0) - qp(1, 1));
    const double rad = std::hypot(half, off);
    const double l1 = mean + rad, l2 = mean - rad;
    if (!(l2 > 0.0))
        throw DegenerateDeformationError("transformed quadratic form is not positive definite");

    if (rad < 1e-12 * l1) {
        const double s = 1.0 / std::sqrt(l1);
        return {Vec2(s, s), 0.0};
    }
    // Eigenvector of l1: angle theta with tan(2 theta) = off / half.
    const double theta1 = 0.5 * std::atan2(off, half);
    const Vec2 e1(std::cos(theta1), std::sin(theta1));
    const Vec2 e2(-e1.y(), e1.x());

    const Vec2 ref = a * Vec2(std::cos(referencePhi), std::sin(referencePhi));
    const double c1 = std::abs(ref.normalized().dot(e1));
    const double c2 = std::abs(ref.normalized().dot(e2));
    const double tieTol = 1e-12;
    if (c2 > c1 + tieTol)
        return {Vec2(1.0 / std::sqrt(l2), 1.0 / std::sqrt(l1)), canonical_angle(e2)};
    return {Vec2(1.0 / std::sqrt(l1), 1.0 / std::sqrt(l2)), canonical_angle(e1)};
}

Mat3 WorldSplat::covariance() const {
    Mat32 u;
    u.col(0) = tangent_u;
    u.col(1) = tangent_v;
    return u * scales.cwiseAbs2().asDiagonal() * u.transpose();
}

WorldSplat realize_world(const SurfaceGaussian &g, const DeformedMesh &canonical,
                         const DeformedMesh &deformed, const SurfaceSettings &settings) {
    const int f = g.face_id;
    if (f < 0 || f >= canonical.face_count() || f >= deformed.face_count())
        throw DomainError("gaussian face id out of range");
    if (canonical.degenerate[f] || deformed.degenerate[f])
        throw DegenerateTriangleError("face " + std::to_string(f) + " is degenerate");

    const auto [c1, c2, c3] = canonical.triangle(f);
    const auto [d1, d2, d3] = deformed.triangle(f);
    const Mat2 mc = edge_projection(c1, c2, c3);
    const Mat2 md = edge_projection(d1, d2, d3);
    const Mat2 a = deformation_gradient(mc, md, settings.det_epsilon);

    const Vec2 s = g.log_scales.array().exp().matrix();
    const EllipseParams ep =
        transform_ellipse(ellipse_quadratic(s, g.rotation_phi), a, g.rotation_phi, settings.det_epsilon);

    const Vec3 w = barycentric_weights(g.bary_logits);
    const Vec3 n = deformed.face_normals[f];
    const FaceFrame &fr = deformed.face_frames[f];

    WorldSplat out;
    out.center = w[0] * d1 + w[1] * d2 + w[2] * d3 + normal_offset(g.offset_logit, settings.z_max) * n;
    out.tangent_u = std::cos(ep.phi) * fr.u + std::sin(ep.phi) * fr.v;
    out.tangent_v = n.cross(out.tangent_u);
    out.scales = ep.scales;
    out.normal = n;
    out.albedo = Vec3(sigmoid(g.albedo_logits.x()), sigmoid(g.albedo_logits.y()),
                      sigmoid(g.albedo_logits.z()));
    out.opacity = sigmoid(g.opacity_logit);
    return out;
}

Vec3 canonical_anchor(const SurfaceGaussian &g, const DeformedMesh &canonical, double zMax) {
    const auto [c1, c2, c3] = canonical.triangle(g.face_id);
    const Vec3 w = barycentric_weights(g.bary_logits);
    return w[0] * c1 + w[1] * c2 + w[2] * c3 +
           normal_offset(g.offset_logit, zMax) * canonical.face_normals[g.face_id];
}

} // namespace handsplat
