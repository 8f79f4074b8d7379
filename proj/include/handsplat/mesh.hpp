// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Articulated triangle mesh: kinematic tree, linear blend skinning, per-face
// Gram-Schmidt frames and exact nearest-triangle queries.
#pragma once

#include <handsplat/common.hpp>

#include <array>
#include <span>
#include <vector>

namespace handsplat {

enum class FaceSide : std::uint8_t { palm = 0, back = 1 };

struct JointWeight {
    int joint = 0;
    double weight = 0.0;
};

inline constexpr double kDefaultAreaEpsilon = 1e-12;

/// Canonical mesh plus rig. Joint rest transforms are expressed relative to the
/// parent joint; the root's is relative to the world.
struct ArticulatedMesh {
    std::vector<Vec3> rest_vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<int> joint_parents; // -1 marks the root
    std::vector<RigidTransform> joint_rest_transforms;
    std::vector<std::vector<JointWeight>> skin_weights; // one sparse row per vertex
    std::vector<FaceSide> face_side_labels;

    int vertex_count() const { return static_cast<int>(rest_vertices.size()); }
    int face_count() const { return static_cast<int>(faces.size()); }
    int joint_count() const { return static_cast<int>(joint_parents.size()); }

    /// Throws DimensionError / DomainError / DegenerateTriangleError on any
    /// violated invariant.
    void validate(double areaEpsilon = kDefaultAreaEpsilon) const;

    /// Joints ordered so every parent precedes its children.
    std::vector<int> joint_order() const;
};

struct PoseFrame {
    std::vector<Vec3> joint_rotations; // axis-angle, radians
    Vec3 root_translation = Vec3::Zero();

    static PoseFrame zero(int jointCount) {
        PoseFrame p;
        p.joint_rotations.assign(static_cast<std::size_t>(jointCount), Vec3::Zero());
        return p;
    }

    /// Rejects non-finite entries and wraps every rotation magnitude into [0, 2pi).
    void normalize();
};

struct FaceFrame {
    Vec3 u = Vec3::UnitX();
    Vec3 v = Vec3::UnitY();
};

/// Posed (or rest) surface with per-face normals and local frames.
struct DeformedMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<Vec3> face_normals;
    std::vector<FaceFrame> face_frames;
    std::vector<double> face_areas;
    std::vector<std::uint8_t> degenerate; // 1 where area < epsilon

    int face_count() const { return static_cast<int>(faces.size()); }
    bool has_degenerate() const;
    std::array<Vec3, 3> triangle(int face) const {
        const auto &f = faces[static_cast<std::size_t>(face)];
        return {vertices[f[0]], vertices[f[1]], vertices[f[2]]};
    }
};

/// Rotation matrix of an axis-angle vector.
Mat3 axis_angle_to_matrix(const Vec3 &omega);

/// Partial derivatives dR/d(omega_i), i = 0..2.
std::array<Mat3, 3> axis_angle_jacobian(const Vec3 &omega);

/// World transform of every joint. Zero rotations reproduce the rest pose.
std::vector<RigidTransform> forward_kinematics(const ArticulatedMesh &mesh, const PoseFrame &pose);

std::vector<RigidTransform> rest_world_transforms(const ArticulatedMesh &mesh);

/// world_j * rest_world_j^-1: the transforms consumed by skin_lbs.
std::vector<RigidTransform> skinning_transforms(const ArticulatedMesh &mesh,
                                                std::span<const RigidTransform> world);

/// Linear blend skinning of the rest vertices.
DeformedMesh skin_lbs(const ArticulatedMesh &mesh, std::span<const RigidTransform> transforms,
                      double areaEpsilon = kDefaultAreaEpsilon);

/// Linear blend skinning of arbitrary canonical positions (rest + learned offsets).
DeformedMesh skin_lbs(const ArticulatedMesh &mesh, std::span<const RigidTransform> transforms,
                      std::span<const Vec3> canonicalVertices,
                      double areaEpsilon = kDefaultAreaEpsilon);

/// Normals, frames and areas for the given vertex positions.
DeformedMesh build_surface(std::span<const std::array<int, 3>> faces, std::vector<Vec3> vertices,
                           double areaEpsilon = kDefaultAreaEpsilon);

/// u = e1/|e1|, v = normalized component of e2 orthogonal to u.
FaceFrame gram_schmidt_frame(const Vec3 &e1, const Vec3 &e2, double epsilon = 1e-12);

struct ClosestPoint {
    Vec3 point;
    Vec3 bary; // weights of (a, b, c)
};

/// Exact closest point of a triangle to p (vertex, edge and interior regions).
ClosestPoint closest_point_on_triangle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c);

struct TriangleHit {
    int face = -1;
    Vec3 bary = Vec3::Zero();
    double distance = 0.0;
};

/// Bounding-volume hierarchy over a triangle soup answering exact nearest-triangle
/// queries. Ties resolve to the lowest face index.
class TriangleLocator {
  public:
    TriangleLocator(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces,
                    std::span<const std::uint8_t> skipFaces = {});

    TriangleHit closest(const Vec3 &point) const;

  private:
    struct Node {
        Eigen::AlignedBox3d box;
        int left = -1, right = -1;
        int begin = 0, end = 0;
    };
    int build(int begin, int end);

    std::vector<Vec3> mVertices;
    std::vector<std::array<int, 3>> mFaces;
    std::vector<int> mOrder;
    std::vector<Eigen::AlignedBox3d> mBoxes;
    std::vector<Node> mNodes;
};

/// One-shot nearest-triangle query over the non-degenerate faces of a surface.
TriangleHit closest_triangle(const DeformedMesh &surface, const Vec3 &point);

/// Palm/back labels from the sign of (rest normal . palmAxis); positive is palm.
std::vector<FaceSide> label_face_sides(const ArticulatedMesh &mesh, const Vec3 &palmAxis);

double median_edge_length(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces);

} // namespace handsplat
