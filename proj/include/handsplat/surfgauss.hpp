// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Gaussians anchored to mesh triangles and the closed-form transport of their
// tangent-plane ellipses from the canonical to a deformed triangle.
#pragma once

#include <handsplat/mesh.hpp>

#include <vector>

namespace handsplat {

/// Learnable parameters of one surface-anchored Gaussian. Every real field is
/// unconstrained; activations map it into its valid range.
struct SurfaceGaussian {
    int face_id = 0;
    Vec3 bary_logits = Vec3::Zero();   // softmax -> barycentric weights
    Vec2 log_scales = Vec2::Zero();    // exp -> (s_x, s_y), meters
    double rotation_phi = 0.0;         // radians, in the face's Gram-Schmidt frame
    double offset_logit = 0.0;         // sigmoid * z_max -> normal offset, meters
    Vec3 albedo_logits = Vec3::Zero(); // sigmoid -> RGB
    double opacity_logit = 0.0;        // sigmoid -> alpha
};

using SurfaceGaussianSet = std::vector<SurfaceGaussian>;

/// Number of real parameters per Gaussian (face_id excluded).
inline constexpr int kGaussianParamCount = 11;

struct SurfaceSettings {
    double z_max = 0.002;
    double det_epsilon = 1e-10;
    int gaussians_per_face = 1;
    double init_scale_factor = 0.7;
    double init_opacity = 0.1;
    double init_albedo = 0.5;
};

/// Throws DomainError if a Gaussian is non-finite or anchored to an invalid face.
void validate_gaussians(const SurfaceGaussianSet &set, int faceCount);

/// Default initialization: gaussians_per_face Gaussians at each face centroid.
SurfaceGaussianSet initialize_gaussians(const DeformedMesh &canonical, const SurfaceSettings &settings);

/// Softmax of the logits, renormalized so the weights sum to one.
Vec3 barycentric_weights(const Vec3 &logits);

inline double normal_offset(double offsetLogit, double zMax) { return zMax * sigmoid(offsetLogit); }

/// Columns are the two triangle edges expressed in the triangle's Gram-Schmidt frame.
Mat2 edge_projection(const Vec3 &v1, const Vec3 &v2, const Vec3 &v3);

/// A = M_deform * M_canon^-1.
Mat2 deformation_gradient(const Mat2 &canon, const Mat2 &deform, double detEpsilon = 1e-10);

struct EllipseQuadratic {
    Mat2 q; // unit level set is the 1-sigma ellipse
};

struct EllipseParams {
    Vec2 scales;
    double phi;
};

/// Q = R(phi) diag(1/s_x^2, 1/s_y^2) R(phi)^T.
EllipseQuadratic ellipse_quadratic(const Vec2 &scales, double phi);

inline Mat2 rotation2(double phi) {
    Mat2 r;
    r << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
    return r;
}

/// Eigen-decomposes Q' = A^-T Q A^-1. The first returned axis is the eigenvector
/// closest in direction to A * (cos referencePhi, sin referencePhi), so an axis keeps
/// its identity through the deformation; on an exact tie the larger eigenvalue
/// (shorter axis) comes first. phi' lies in [0, pi) and is 0 for isotropic Q'.
EllipseParams transform_ellipse(const EllipseQuadratic &q, const Mat2 &a, double referencePhi = 0.0,
                                double detEpsilon = 1e-10);

/// Deformed Gaussian realized in world space.
struct WorldSplat {
    Vec3 center = Vec3::Zero();
    Vec3 tangent_u = Vec3::UnitX();
    Vec3 tangent_v = Vec3::UnitY();
    Vec2 scales = Vec2::Ones();
    Vec3 normal = Vec3::UnitZ();
    Vec3 albedo = Vec3::Constant(0.5);
    double opacity = 0.5;

    /// U diag(s^2) U^T with U = [tangent_u tangent_v].
    Mat3 covariance() const;
};

WorldSplat realize_world(const SurfaceGaussian &g, const DeformedMesh &canonical,
                         const DeformedMesh &deformed, const SurfaceSettings &settings);

/// Canonical anchor point: barycentric position lifted along the canonical normal.
Vec3 canonical_anchor(const SurfaceGaussian &g, const DeformedMesh &canonical, double zMax);

} // namespace handsplat
