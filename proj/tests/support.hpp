// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent oracles for the unit tests.
#pragma once

#include <handsplat/diff.hpp>
#include <handsplat/mesh.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <limits>

namespace hs_test {

using namespace handsplat;

inline Mat3 random_rotation(Rng &rng) {
    return axis_angle_to_matrix(rng.unit_vector() * rng.uniform(0.0, kPi));
}

inline RigidTransform random_rigid(Rng &rng, double reach = 1.0) {
    return {random_rotation(rng), Vec3(rng.uniform(-reach, reach), rng.uniform(-reach, reach),
                                       rng.uniform(-reach, reach))};
}

/// Single-joint mesh with the given geometry; every vertex fully bound to the root.
inline ArticulatedMesh rigid_mesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> faces) {
    ArticulatedMesh m;
    m.rest_vertices = std::move(vertices);
    m.faces = std::move(faces);
    m.joint_parents = {-1};
    m.joint_rest_transforms = {RigidTransform::identity()};
    m.skin_weights.assign(m.rest_vertices.size(), {JointWeight{0, 1.0}});
    m.face_side_labels.assign(m.faces.size(), FaceSide::palm);
    return m;
}

/// Jittered grid surface z = h(x, y) with nx * ny vertices.
inline ArticulatedMesh grid_mesh(Rng &rng, int nx, int ny, double spacing = 0.01, double bump = 0.003) {
    std::vector<Vec3> v;
    std::vector<std::array<int, 3>> f;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            v.emplace_back(spacing * (i + rng.uniform(-0.2, 0.2)), spacing * (j + rng.uniform(-0.2, 0.2)),
                           rng.uniform(-bump, bump));
    for (int j = 0; j + 1 < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
            const int a = j * nx + i, b = a + 1, c = a + nx, d = c + 1;
            f.push_back({a, b, d});
            f.push_back({a, d, c});
        }
    return rigid_mesh(std::move(v), std::move(f));
}

inline double point_segment_distance(const Vec3 &p, const Vec3 &a, const Vec3 &b) {
    const Vec3 ab = b - a;
    const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    return (a + t * ab - p).norm();
}

/// Oracle: distance from p to triangle (a, b, c) via plane projection and an
/// inside test by signed sub-areas, falling back to the three edges.
inline double oracle_point_triangle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
    const Vec3 n = (b - a).cross(c - a).normalized();
    const double h = (p - a).dot(n);
    const Vec3 q = p - h * n;
    const double s0 = (b - a).cross(q - a).dot(n), s1 = (c - b).cross(q - b).dot(n), s2 = (a - c).cross(q - c).dot(n);
    if (s0 >= 0 && s1 >= 0 && s2 >= 0)
        return std::abs(h);
    return std::min({point_segment_distance(p, a, b), point_segment_distance(p, b, c), point_segment_distance(p, c, a)});
}

/// Oracle: barycentric coordinates of p (in the plane of a, b, c) from area ratios.
inline Vec3 oracle_barycentric(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
    const Vec3 n = (b - a).cross(c - a);
    const double area = n.squaredNorm();
    return Vec3((b - p).cross(c - p).dot(n) / area, (c - p).cross(a - p).dot(n) / area,
                (a - p).cross(b - p).dot(n) / area);
}

inline double max_abs_diff(const std::vector<double> &a, const std::vector<double> &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("handsplat_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace hs_test
