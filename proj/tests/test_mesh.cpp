// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

using namespace hs_test;

namespace {

// Root at the origin and one child one unit along x.
ArticulatedMesh two_joint_chain() {
    ArticulatedMesh m = rigid_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
    m.joint_parents = {-1, 0};
    RigidTransform child;
    child.translation = Vec3(1, 0, 0);
    m.joint_rest_transforms = {RigidTransform::identity(), child};
    m.skin_weights = {{{0, 1.0}}, {{1, 1.0}}, {{0, 0.5}, {1, 0.5}}};
    return m;
}

} // namespace

TEST(ForwardKinematics, ZeroPoseReproducesRest) {
    const ArticulatedMesh m = two_joint_chain();
    const auto world = forward_kinematics(m, PoseFrame::zero(2));
    const auto rest = rest_world_transforms(m);
    for (int j = 0; j < 2; ++j) {
        EXPECT_EQ(world[j].rotation, rest[j].rotation);
        EXPECT_EQ(world[j].translation, rest[j].translation);
    }
}

TEST(ForwardKinematics, QuarterTurnMovesChild) {
    const ArticulatedMesh m = two_joint_chain();
    PoseFrame p = PoseFrame::zero(2);
    p.joint_rotations[0] = Vec3(0, 0, kPi / 2);
    const auto world = forward_kinematics(m, p);
    EXPECT_NEAR((world[1].translation - Vec3(0, 1, 0)).norm(), 0.0, 1e-15);
}

TEST(ForwardKinematics, RootTranslationAndDeterminism) {
    const ArticulatedMesh m = two_joint_chain();
    Rng rng(3);
    PoseFrame p = PoseFrame::zero(2);
    for (auto &w : p.joint_rotations)
        w = rng.unit_vector() * rng.uniform(0, 2);
    p.root_translation = Vec3(0.1, -0.2, 0.3);
    const auto a = forward_kinematics(m, p);
    const auto b = forward_kinematics(m, p);
    for (int j = 0; j < 2; ++j) {
        EXPECT_EQ(a[j].rotation, b[j].rotation);
        EXPECT_EQ(a[j].translation, b[j].translation);
    }
    EXPECT_NEAR((a[0].translation - p.root_translation).norm(), 0.0, 1e-15);
}

TEST(ForwardKinematics, JointCountMismatch) {
    EXPECT_THROW(forward_kinematics(two_joint_chain(), PoseFrame::zero(3)), DimensionError);
}

TEST(SkinLbs, IdentityIsExact) {
    Rng rng(1);
    const ArticulatedMesh m = grid_mesh(rng, 5, 4);
    const std::vector<RigidTransform> id(1);
    const DeformedMesh d = skin_lbs(m, id);
    for (std::size_t i = 0; i < m.rest_vertices.size(); ++i)
        EXPECT_EQ(d.vertices[i], m.rest_vertices[i]);
}

TEST(SkinLbs, RigidTranslation) {
    Rng rng(2);
    const ArticulatedMesh m = grid_mesh(rng, 4, 4);
    RigidTransform t;
    t.translation = Vec3(0.3, -0.1, 2.0);
    const DeformedMesh d = skin_lbs(m, std::vector<RigidTransform>{t});
    for (std::size_t i = 0; i < m.rest_vertices.size(); ++i)
        EXPECT_NEAR((d.vertices[i] - m.rest_vertices[i] - t.translation).norm(), 0.0, 1e-15);
}

TEST(SkinLbs, ConvexBlend) {
    ArticulatedMesh m = rigid_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
    m.joint_parents = {-1, 0};
    m.joint_rest_transforms = {RigidTransform::identity(), RigidTransform::identity()};
    m.skin_weights.assign(3, {{0, 0.5}, {1, 0.5}});
    RigidTransform shift;
    shift.translation = Vec3(2, 0, 0);
    const DeformedMesh d = skin_lbs(m, std::vector<RigidTransform>{RigidTransform::identity(), shift});
    for (int i = 0; i < 3; ++i)
        EXPECT_NEAR((d.vertices[i] - m.rest_vertices[i] - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
}

TEST(SkinLbs, GlobalRigidMotionPreservesDistances) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        ArticulatedMesh m = grid_mesh(rng, 5, 5);
        m.joint_parents = {-1, 0, 1};
        m.joint_rest_transforms = {random_rigid(rng, 0.01), random_rigid(rng, 0.01), random_rigid(rng, 0.01)};
        for (auto &row : m.skin_weights) {
            const double a = rng.uniform(), b = rng.uniform() * (1 - a);
            row = {{0, a}, {1, b}, {2, 1 - a - b}};
        }
        const RigidTransform g = random_rigid(rng);
        const std::vector<RigidTransform> moved(3, g);
        const DeformedMesh d = skin_lbs(m, moved);
        for (int i = 0; i < m.vertex_count(); ++i)
            for (int k = i + 1; k < m.vertex_count(); ++k)
                EXPECT_NEAR((d.vertices[i] - d.vertices[k]).norm(),
                            (m.rest_vertices[i] - m.rest_vertices[k]).norm(), 1e-9);
    }
}

TEST(SkinLbs, FramesAreRightHandedOrthonormal) {
    Rng rng(9);
    const ArticulatedMesh m = grid_mesh(rng, 6, 6);
    const DeformedMesh d = skin_lbs(m, std::vector<RigidTransform>{random_rigid(rng)});
    for (int f = 0; f < d.face_count(); ++f) {
        const auto &fr = d.face_frames[f];
        const Vec3 &n = d.face_normals[f];
        EXPECT_NEAR(n.norm(), 1.0, 1e-9);
        EXPECT_NEAR(fr.u.dot(fr.v), 0.0, 1e-12);
        EXPECT_NEAR((fr.u.cross(fr.v) - n).norm(), 0.0, 1e-9);
    }
}

TEST(SkinLbs, DegenerateDeformedFaceIsFlagged) {
    ArticulatedMesh m = rigid_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
    m.joint_parents = {-1, 0};
    m.joint_rest_transforms = {RigidTransform::identity(), RigidTransform::identity()};
    m.skin_weights = {{{0, 1.0}}, {{0, 1.0}}, {{1, 1.0}}};
    RigidTransform collapse;
    collapse.translation = Vec3(0.5, -1.0, 0.0); // (0,1,0) -> (0.5,0,0), on edge 0-1
    const DeformedMesh d = skin_lbs(m, std::vector<RigidTransform>{RigidTransform::identity(), collapse});
    EXPECT_TRUE(d.has_degenerate());
}

TEST(GramSchmidt, Examples) {
    FaceFrame f = gram_schmidt_frame({2, 0, 0}, {1, 1, 0});
    EXPECT_EQ(f.u, Vec3(1, 0, 0));
    EXPECT_NEAR((f.v - Vec3(0, 1, 0)).norm(), 0.0, 1e-15);
    f = gram_schmidt_frame({0, 3, 0}, {0, 0, 5});
    EXPECT_EQ(f.u, Vec3(0, 1, 0));
    EXPECT_EQ(f.v, Vec3(0, 0, 1));
    EXPECT_THROW(gram_schmidt_frame({1, 0, 0}, {2, 0, 0}), DegenerateTriangleError);
}

TEST(GramSchmidt, OrthonormalOnRandomInput) {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const Vec3 e1 = rng.unit_vector() * rng.uniform(1e-3, 10), e2 = rng.unit_vector() * rng.uniform(1e-3, 10);
        if (e1.cross(e2).norm() < 1e-6)
            continue;
        const FaceFrame f = gram_schmidt_frame(e1, e2);
        EXPECT_NEAR(f.u.dot(f.v), 0.0, 1e-12);
        EXPECT_NEAR(f.u.norm(), 1.0, 1e-12);
        EXPECT_NEAR(f.v.norm(), 1.0, 1e-12);
    }
}

TEST(ClosestTriangle, LiftedCentroid) {
    Rng rng(4);
    const ArticulatedMesh m = grid_mesh(rng, 4, 4);
    const DeformedMesh d = build_surface(m.faces, m.rest_vertices);
    for (int f = 0; f < d.face_count(); ++f) {
        const auto t = d.triangle(f);
        const double h = 1e-4;
        const Vec3 p = (t[0] + t[1] + t[2]) / 3.0 + h * d.face_normals[f];
        const TriangleHit hit = closest_triangle(d, p);
        EXPECT_EQ(hit.face, f);
        EXPECT_NEAR((hit.bary - Vec3::Constant(1.0 / 3.0)).norm(), 0.0, 1e-9);
        EXPECT_NEAR(hit.distance, h, 1e-12);
    }
}

TEST(ClosestTriangle, SharedVertexTieGoesToLowestFace) {
    Rng rng(6);
    const ArticulatedMesh m = grid_mesh(rng, 4, 4);
    const DeformedMesh d = build_surface(m.faces, m.rest_vertices);
    for (int v = 0; v < m.vertex_count(); ++v) {
        int lowest = -1;
        for (int f = 0; f < d.face_count() && lowest < 0; ++f)
            for (int k : d.faces[f])
                if (k == v)
                    lowest = f;
        const TriangleHit hit = closest_triangle(d, m.rest_vertices[v]);
        EXPECT_EQ(hit.distance, 0.0);
        EXPECT_EQ(hit.face, lowest);
    }
}

TEST(ClosestTriangle, MatchesExhaustiveScan) {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const ArticulatedMesh m = grid_mesh(rng, 6 + trial, 5, 0.01, 0.004);
        const DeformedMesh d = build_surface(m.faces, m.rest_vertices);
        for (int i = 0; i < 200; ++i) {
            const Vec3 p(rng.uniform(-0.02, 0.08), rng.uniform(-0.02, 0.06), rng.uniform(-0.02, 0.02));
            double best = std::numeric_limits<double>::infinity();
            int bestFace = -1;
            for (int f = 0; f < d.face_count(); ++f) {
                const auto t = d.triangle(f);
                const double dist = oracle_point_triangle(p, t[0], t[1], t[2]);
                if (dist < best - 1e-14) {
                    best = dist;
                    bestFace = f;
                }
            }
            const TriangleHit hit = closest_triangle(d, p);
            EXPECT_NEAR(hit.distance, best, 1e-12);
            if (hit.face != bestFace) {
                // Only acceptable for an exact tie.
                const auto t = d.triangle(hit.face);
                EXPECT_NEAR(oracle_point_triangle(p, t[0], t[1], t[2]), best, 1e-12);
            }
            EXPECT_NEAR(hit.bary.sum(), 1.0, 1e-12);
            EXPECT_GE(hit.bary.minCoeff(), 0.0);
            const auto t = d.triangle(hit.face);
            const Vec3 q = hit.bary[0] * t[0] + hit.bary[1] * t[1] + hit.bary[2] * t[2];
            EXPECT_NEAR((q - p).norm(), hit.distance, 1e-12);
        }
    }
}

TEST(ArticulatedMesh, ValidationRejectsBrokenRigs) {
    const ArticulatedMesh good = two_joint_chain();
    EXPECT_NO_THROW(good.validate());

    ArticulatedMesh m = good;
    m.faces[0][2] = 7;
    EXPECT_THROW(m.validate(), DimensionError);

    m = good;
    m.faces[0] = {0, 0, 1};
    EXPECT_THROW(m.validate(), DegenerateTriangleError);

    m = good;
    m.rest_vertices[2] = Vec3(2, 0, 0);
    EXPECT_THROW(m.validate(), DegenerateTriangleError);

    m = good;
    m.skin_weights[2] = {{0, 0.5}, {1, 0.4}};
    EXPECT_THROW(m.validate(), DomainError);

    m = good;
    m.skin_weights[2] = {{0, 1.5}, {1, -0.5}};
    EXPECT_THROW(m.validate(), DomainError);

    m = good;
    m.joint_parents = {1, 0};
    EXPECT_THROW(m.validate(), DomainError);

    m = good;
    m.joint_parents = {-1, -1};
    EXPECT_THROW(m.validate(), DomainError);
}

TEST(PoseFrame, NormalizeWrapsLargeRotations) {
    PoseFrame p = PoseFrame::zero(1);
    p.joint_rotations[0] = Vec3(0, 0, 2 * kPi + 0.5);
    const Mat3 before = axis_angle_to_matrix(p.joint_rotations[0]);
    p.normalize();
    EXPECT_LT(p.joint_rotations[0].norm(), 2 * kPi);
    EXPECT_NEAR((axis_angle_to_matrix(p.joint_rotations[0]) - before).norm(), 0.0, 1e-12);
    p.root_translation.x() = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(p.normalize(), DomainError);
}

TEST(AxisAngle, JacobianMatchesFiniteDifferences) {
    Rng rng(12);
    for (int i = 0; i < 50; ++i) {
        const Vec3 w = rng.unit_vector() * rng.uniform(0.0, 3.0);
        const auto jac = axis_angle_jacobian(w);
        for (int k = 0; k < 3; ++k) {
            Vec3 a = w, b = w;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            const Mat3 fd = (axis_angle_to_matrix(a) - axis_angle_to_matrix(b)) / 2e-6;
            EXPECT_NEAR((fd - jac[k]).norm(), 0.0, 1e-8);
        }
    }
}
