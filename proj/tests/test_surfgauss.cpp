// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <Eigen/Eigenvalues>

#include <handsplat/surfgauss.hpp>

using namespace hs_test;

namespace {

// Random 2x2 map with condition number below `maxCond`.
Mat2 random_deformation(Rng &rng, double maxCond = 100.0) {
    const double s1 = std::exp(rng.uniform(-1.5, 1.5));
    const double s2 = s1 / std::exp(rng.uniform(0.0, std::log(maxCond) * 0.999));
    Mat2 d = Mat2::Zero();
    d(0, 0) = s1;
    d(1, 1) = rng.uniform() < 0.2 ? -s2 : s2;
    return rotation2(rng.uniform(0, 2 * kPi)) * d * rotation2(rng.uniform(0, 2 * kPi));
}

Vec2 random_scales(Rng &rng) { return Vec2(std::exp(rng.uniform(-2, 2)), std::exp(rng.uniform(-2, 2))); }

double wrap_pi(double a) {
    a = std::fmod(a, kPi);
    return a < 0 ? a + kPi : a;
}

// Angular distance modulo pi.
double angle_gap(double a, double b) {
    const double d = std::abs(wrap_pi(a) - wrap_pi(b));
    return std::min(d, kPi - d);
}

std::array<Vec3, 3> random_triangle(Rng &rng) {
    for (;;) {
        std::array<Vec3, 3> t{rng.unit_vector() * rng.uniform(0.1, 1), rng.unit_vector() * rng.uniform(0.1, 1),
                              rng.unit_vector() * rng.uniform(0.1, 1)};
        if ((t[1] - t[0]).cross(t[2] - t[0]).norm() > 0.05)
            return t;
    }
}

} // namespace

TEST(BarycentricWeights, Examples) {
    EXPECT_NEAR((barycentric_weights(Vec3::Zero()) - Vec3::Constant(1.0 / 3)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((barycentric_weights(Vec3::Constant(-7.5)) - Vec3::Constant(1.0 / 3)).norm(), 0.0, 1e-15);
    // exp(ln 2) = 2, so the weights are 2/4, 1/4, 1/4.
    const Vec3 w = barycentric_weights(Vec3(std::log(2.0), 0, 0));
    EXPECT_NEAR(w[0], 0.5, 1e-15);
    EXPECT_NEAR(w[1], 0.25, 1e-15);
    EXPECT_NEAR(w[2], 0.25, 1e-15);
}

TEST(BarycentricWeights, OpenSimplex) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 w = barycentric_weights(Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-30, 30)));
        EXPECT_GT(w.minCoeff(), 0.0);
        EXPECT_NEAR(w.sum(), 1.0, 1e-15);
    }
}

TEST(EdgeProjection, Examples) {
    EXPECT_NEAR((edge_projection({0, 0, 0}, {1, 0, 0}, {0, 1, 0}) - Mat2::Identity()).norm(), 0.0, 1e-15);
    Mat2 expected;
    expected << 2, 1, 0, 1;
    EXPECT_NEAR((edge_projection({0, 0, 0}, {2, 0, 0}, {1, 1, 0}) - expected).norm(), 0.0, 1e-15);
    EXPECT_THROW(edge_projection({0, 0, 0}, {1, 0, 0}, {2, 0, 0}), DegenerateTriangleError);
}

TEST(EdgeProjection, RigidInvarianceAndArea) {
    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
        const auto t = random_triangle(rng);
        const Mat2 m = edge_projection(t[0], t[1], t[2]);
        EXPECT_NEAR(m(1, 0), 0.0, 1e-13);
        EXPECT_NEAR(m(0, 0), (t[1] - t[0]).norm(), 1e-12);
        EXPECT_NEAR(m.determinant(), (t[1] - t[0]).cross(t[2] - t[0]).norm(), 1e-12);
        const RigidTransform g = random_rigid(rng);
        const Mat2 moved = edge_projection(g.apply(t[0]), g.apply(t[1]), g.apply(t[2]));
        EXPECT_NEAR((moved - m).norm(), 0.0, 1e-9);
    }
}

TEST(DeformationGradient, Examples) {
    Rng rng(3);
    const Mat2 m = random_deformation(rng);
    EXPECT_NEAR((deformation_gradient(m, m) - Mat2::Identity()).norm(), 0.0, 1e-12);
    Mat2 stretch;
    stretch << 2, 0, 0, 1;
    EXPECT_NEAR((deformation_gradient(Mat2::Identity(), stretch) - stretch).norm(), 0.0, 1e-15);
    Mat2 singular;
    singular << 1, 2, 2, 4;
    EXPECT_THROW(deformation_gradient(singular, Mat2::Identity()), DegenerateTriangleError);
}

TEST(DeformationGradient, PreservesBarycentricCoordinates) {
    Rng rng(4);
    for (int i = 0; i < 1000; ++i) {
        const auto c = random_triangle(rng);
        const auto d = random_triangle(rng);
        const Mat2 mc = edge_projection(c[0], c[1], c[2]);
        const Mat2 md = edge_projection(d[0], d[1], d[2]);
        const Mat2 a = deformation_gradient(mc, md);
        EXPECT_NEAR((a * mc - md).norm(), 0.0, 1e-9);
        // Point in canonical local coordinates and its barycentric oracle.
        Vec3 w(rng.uniform(), rng.uniform(), rng.uniform());
        w /= w.sum();
        const Vec2 p = w[1] * mc.col(0) + w[2] * mc.col(1);
        const Vec2 q = a * p;
        const auto lift = [](const Vec2 &x) { return Vec3(x.x(), x.y(), 0.0); };
        const Vec3 wc = oracle_barycentric(lift(p), Vec3::Zero(), lift(mc.col(0)), lift(mc.col(1)));
        const Vec3 wd = oracle_barycentric(lift(q), Vec3::Zero(), lift(md.col(0)), lift(md.col(1)));
        EXPECT_NEAR((wc - wd).norm(), 0.0, 1e-9);
        EXPECT_NEAR((wc - w).norm(), 0.0, 1e-9);
    }
}

TEST(EllipseQuadratic, Examples) {
    EXPECT_NEAR((ellipse_quadratic({1, 1}, 0.7).q - Mat2::Identity()).norm(), 0.0, 1e-15);
    Mat2 a;
    a << 0.25, 0, 0, 1;
    EXPECT_NEAR((ellipse_quadratic({2, 1}, 0).q - a).norm(), 0.0, 1e-15);
    Mat2 b;
    b << 1, 0, 0, 0.25;
    EXPECT_NEAR((ellipse_quadratic({2, 1}, kPi / 2).q - b).norm(), 0.0, 1e-15);
    EXPECT_THROW(ellipse_quadratic({0, 1}, 0), DomainError);
    EXPECT_THROW(ellipse_quadratic({1, -2}, 0), DomainError);
}

TEST(EllipseQuadratic, EigenvaluesAreInverseSquaredScales) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const Vec2 s = random_scales(rng);
        const Mat2 q = ellipse_quadratic(s, rng.uniform(-5, 5)).q;
        Eigen::SelfAdjointEigenSolver<Mat2> es(q);
        const Vec2 expected = Vec2(1 / (s.x() * s.x()), 1 / (s.y() * s.y()));
        EXPECT_NEAR(es.eigenvalues().minCoeff(), expected.minCoeff(), 1e-9 * expected.maxCoeff());
        EXPECT_NEAR(es.eigenvalues().maxCoeff(), expected.maxCoeff(), 1e-9 * expected.maxCoeff());
    }
}

TEST(TransformEllipse, IdentityKeepsParameters) {
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        const Vec2 s = random_scales(rng);
        if (std::abs(s.x() - s.y()) < 1e-3)
            continue;
        const double phi = rng.uniform(-7, 7);
        const EllipseParams p = transform_ellipse(ellipse_quadratic(s, phi), Mat2::Identity(), phi);
        EXPECT_NEAR((p.scales - s).norm(), 0.0, 1e-9 * s.maxCoeff());
        EXPECT_NEAR(angle_gap(p.phi, phi), 0.0, 1e-9);
        EXPECT_GE(p.phi, 0.0);
        EXPECT_LT(p.phi, kPi);
    }
}

TEST(TransformEllipse, PureStretch) {
    Mat2 a;
    a << 2, 0, 0, 1;
    const EllipseParams p = transform_ellipse(ellipse_quadratic({1, 1}, 0), a);
    EXPECT_NEAR(p.scales.x(), 2.0, 1e-12);
    EXPECT_NEAR(p.scales.y(), 1.0, 1e-12);
    EXPECT_EQ(p.phi, 0.0);
}

TEST(TransformEllipse, RotationAddsAngle) {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const Vec2 s = random_scales(rng);
        if (std::abs(s.x() - s.y()) < 1e-3)
            continue;
        const double phi = rng.uniform(0, kPi), theta = rng.uniform(-kPi, kPi);
        const EllipseParams p = transform_ellipse(ellipse_quadratic(s, phi), rotation2(theta), phi);
        EXPECT_NEAR((p.scales - s).norm(), 0.0, 1e-9 * s.maxCoeff());
        EXPECT_NEAR(angle_gap(p.phi, phi + theta), 0.0, 1e-9);
    }
}

TEST(TransformEllipse, GeneralQuadraticAgainstCharacteristicPolynomial) {
    Mat2 q;
    q << 2, 1, 1, 2;
    // Oracle: roots of l^2 - tr l + det = 0 and the eigenvector (q01, l - q00).
    const double tr = q.trace(), det = q.determinant();
    const double l1 = 0.5 * (tr + std::sqrt(tr * tr - 4 * det)), l2 = 0.5 * (tr - std::sqrt(tr * tr - 4 * det));
    EXPECT_NEAR(l1, 3.0, 1e-15);
    EXPECT_NEAR(l2, 1.0, 1e-15);
    const double oraclePhi = wrap_pi(std::atan2(l1 - q(0, 0), q(0, 1)));
    const EllipseParams p = transform_ellipse({q}, Mat2::Identity());
    // The reference axis (1, 0) is equally close to both eigenvectors; the tie
    // puts the larger eigenvalue (shorter axis) first.
    EXPECT_NEAR(p.scales.x(), 1 / std::sqrt(3.0), 1e-12);
    EXPECT_NEAR(p.scales.y(), 1.0, 1e-12);
    EXPECT_NEAR(p.phi, oraclePhi, 1e-12);
    EXPECT_NEAR(p.phi, kPi / 4, 1e-12);
}

TEST(TransformEllipse, IsotropicResultHasZeroAngle) {
    const EllipseParams p = transform_ellipse(ellipse_quadratic({0.3, 0.3}, 1.1), rotation2(0.4) * 2.0, 1.1);
    EXPECT_EQ(p.phi, 0.0);
    EXPECT_NEAR(p.scales.x(), 0.6, 1e-12);
}

TEST(TransformEllipse, SingularDeformation) {
    Mat2 a;
    a << 1, 1, 1, 1;
    EXPECT_THROW(transform_ellipse(ellipse_quadratic({1, 2}, 0), a), DegenerateDeformationError);
}

TEST(TransformEllipse, BoundaryPointsMapOntoDeformedBoundary) {
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const Vec2 s = random_scales(rng);
        const double phi = rng.uniform(0, kPi);
        const Mat2 a = random_deformation(rng);
        const EllipseParams p = transform_ellipse(ellipse_quadratic(s, phi), a, phi);
        const Mat2 qp = ellipse_quadratic(p.scales, p.phi).q;
        for (int k = 0; k < 16; ++k) {
            const double t = 2 * kPi * k / 16;
            const Vec2 x = rotation2(phi) * Vec2(s.x() * std::cos(t), s.y() * std::sin(t));
            const Vec2 y = a * x;
            EXPECT_NEAR(y.dot(qp * y), 1.0, 1e-9);
        }
        // Determinant identity.
        EXPECT_NEAR(p.scales.prod(), s.prod() * std::abs(a.determinant()), 1e-9 * s.prod() * std::abs(a.determinant()));
    }
}

TEST(TransformEllipse, RigidDeformationKeepsScales) {
    Rng rng(9);
    for (int i = 0; i < 500; ++i) {
        const auto t = random_triangle(rng);
        const RigidTransform g = random_rigid(rng);
        const Mat2 a = deformation_gradient(edge_projection(t[0], t[1], t[2]),
                                            edge_projection(g.apply(t[0]), g.apply(t[1]), g.apply(t[2])));
        const Vec2 s = random_scales(rng);
        const double phi = rng.uniform(0, kPi);
        const EllipseParams p = transform_ellipse(ellipse_quadratic(s, phi), a, phi);
        EXPECT_NEAR((p.scales - s).norm(), 0.0, 1e-9 * s.maxCoeff());
    }
}

namespace {

SurfaceGaussian random_gaussian(Rng &rng) {
    SurfaceGaussian g;
    g.bary_logits = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    g.log_scales = Vec2(rng.uniform(-6, -3), rng.uniform(-6, -3));
    g.rotation_phi = rng.uniform(0, kPi);
    g.offset_logit = rng.uniform(-4, 4);
    g.albedo_logits = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    g.opacity_logit = rng.uniform(-2, 2);
    return g;
}

} // namespace

TEST(RealizeWorld, UndeformedSurface) {
    Rng rng(10);
    const ArticulatedMesh m = grid_mesh(rng, 4, 4);
    const DeformedMesh c = build_surface(m.faces, m.rest_vertices);
    const SurfaceSettings settings;
    for (int i = 0; i < 100; ++i) {
        SurfaceGaussian g = random_gaussian(rng);
        g.face_id = static_cast<int>(rng.index(static_cast<std::size_t>(c.face_count())));
        const WorldSplat w = realize_world(g, c, c, settings);
        const Vec3 bw = barycentric_weights(g.bary_logits);
        const auto t = c.triangle(g.face_id);
        const Vec3 expected = bw[0] * t[0] + bw[1] * t[1] + bw[2] * t[2] +
                              normal_offset(g.offset_logit, settings.z_max) * c.face_normals[g.face_id];
        EXPECT_NEAR((w.center - expected).norm(), 0.0, 1e-15);
        const Vec2 s = g.log_scales.array().exp();
        EXPECT_NEAR((w.scales - s).norm(), 0.0, 1e-9 * s.maxCoeff());
        const auto &fr = c.face_frames[g.face_id];
        const Vec3 axis = std::cos(g.rotation_phi) * fr.u + std::sin(g.rotation_phi) * fr.v;
        EXPECT_NEAR(std::abs(axis.dot(w.tangent_u)), 1.0, 1e-9);
        EXPECT_NEAR(w.tangent_u.dot(w.tangent_v), 0.0, 1e-9);
        EXPECT_NEAR(w.tangent_u.dot(w.normal), 0.0, 1e-9);
        EXPECT_NEAR(w.tangent_v.dot(w.normal), 0.0, 1e-9);
    }
}

TEST(RealizeWorld, OffsetHalfOfZMaxAtZeroLogit) {
    const ArticulatedMesh m = rigid_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
    const DeformedMesh c = build_surface(m.faces, m.rest_vertices);
    SurfaceGaussian g;
    SurfaceSettings settings;
    settings.z_max = 0.002;
    const WorldSplat w = realize_world(g, c, c, settings);
    EXPECT_NEAR(w.center.z(), 0.001, 1e-18);
}

TEST(RealizeWorld, RigidMotionMovesSplatRigidly) {
    Rng rng(11);
    const ArticulatedMesh m = grid_mesh(rng, 4, 4);
    const DeformedMesh c = build_surface(m.faces, m.rest_vertices);
    const SurfaceSettings settings;
    for (int i = 0; i < 100; ++i) {
        const RigidTransform g = random_rigid(rng);
        std::vector<Vec3> moved;
        for (const Vec3 &v : m.rest_vertices)
            moved.push_back(g.apply(v));
        const DeformedMesh d = build_surface(m.faces, moved);
        SurfaceGaussian sg = random_gaussian(rng);
        sg.face_id = static_cast<int>(rng.index(static_cast<std::size_t>(c.face_count())));
        const WorldSplat a = realize_world(sg, c, c, settings);
        const WorldSplat b = realize_world(sg, c, d, settings);
        EXPECT_NEAR((b.center - g.apply(a.center)).norm(), 0.0, 1e-9);
        EXPECT_NEAR((b.scales - a.scales).norm(), 0.0, 1e-9);
        EXPECT_NEAR((b.covariance() - g.rotation * a.covariance() * g.rotation.transpose()).norm(), 0.0, 1e-12);
    }
}

TEST(RealizeWorld, OffsetStaysInOpenRange) {
    const double zMax = 0.002;
    for (double logit : {-30.0, -5.0, 0.0, 5.0, 30.0}) {
        const double o = normal_offset(logit, zMax);
        EXPECT_GT(o, 0.0);
        EXPECT_LE(o, zMax);
    }
    EXPECT_LT(normal_offset(10.0, zMax), zMax);
}

TEST(InitializeGaussians, Defaults) {
    Rng rng(12);
    const ArticulatedMesh m = grid_mesh(rng, 3, 3);
    const DeformedMesh c = build_surface(m.faces, m.rest_vertices);
    SurfaceSettings settings;
    const SurfaceGaussianSet set = initialize_gaussians(c, settings);
    ASSERT_EQ(set.size(), c.faces.size());
    for (std::size_t f = 0; f < set.size(); ++f) {
        const SurfaceGaussian &g = set[f];
        EXPECT_EQ(g.face_id, static_cast<int>(f));
        EXPECT_EQ(g.bary_logits, Vec3::Zero());
        EXPECT_NEAR(std::exp(g.log_scales.x()), 0.7 * std::sqrt(c.face_areas[f]), 1e-15);
        EXPECT_EQ(g.rotation_phi, 0.0);
        EXPECT_NEAR(sigmoid(g.opacity_logit), 0.1, 1e-15);
        EXPECT_NEAR(sigmoid(g.albedo_logits.x()), 0.5, 1e-15);
    }
    EXPECT_NO_THROW(validate_gaussians(set, c.face_count()));
    SurfaceGaussianSet bad = set;
    bad[0].face_id = c.face_count();
    EXPECT_THROW(validate_gaussians(bad, c.face_count()), DomainError);
}
