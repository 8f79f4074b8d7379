// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/mesh.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

namespace handsplat {

namespace {

Mat3 skew(const Vec3 &w) {
    Mat3 k;
    k << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return k;
}

// Coefficients of R = I + a K + b K^2 and their radial derivatives divided by
// theta: da = (a'/theta) * omega, db = (b'/theta) * omega.
struct RodriguesCoefficients {
    double a, b, da, db;
};

RodriguesCoefficients rodrigues_coefficients(double theta) {
    const double t2 = theta * theta;
    if (theta < 1e-2) {
        const double t4 = t2 * t2, t6 = t4 * t2;
        return {1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
                0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
                -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0,
                -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0};
    }
    const double s = std::sin(theta), c = std::cos(theta);
    return {s / theta, (1.0 - c) / t2, (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)};
}

} // namespace

void ArticulatedMesh::validate(double areaEpsilon) const {
    const int nv = vertex_count();
    const int nj = joint_count();
    if (nv == 0 || faces.empty())
        throw DimensionError("mesh has no vertices or faces");
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto &tri = faces[f];
        for (int idx : tri)
            if (idx < 0 || idx >= nv)
                throw DimensionError("face " + std::to_string(f) + " references vertex " +
                                     std::to_string(idx) + " of " + std::to_string(nv));
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw DegenerateTriangleError("face " + std::to_string(f) + " repeats a vertex");
        const Vec3 e1 = rest_vertices[tri[1]] - rest_vertices[tri[0]];
        const Vec3 e2 = rest_vertices[tri[2]] - rest_vertices[tri[0]];
        if (0.5 * e1.cross(e2).norm() <= areaEpsilon)
            throw DegenerateTriangleError("face " + std::to_string(f) + " has zero rest area");
    }
    if (nj == 0)
        throw DimensionError("rig has no joints");
    if (static_cast<int>(joint_rest_transforms.size()) != nj)
        throw DimensionError("joint_rest_transforms size differs from joint count");
    int roots = 0;
    for (int j = 0; j < nj; ++j) {
        const int p = joint_parents[j];
        if (p < 0)
            ++roots;
        else if (p >= nj || p == j)
            throw DomainError("joint " + std::to_string(j) + " has invalid parent");
    }
    if (roots != 1)
        throw DomainError("kinematic tree must have exactly one root, found " +
                          std::to_string(roots));
    // Acyclic and connected iff every joint reaches the root within nj hops.
    for (int j = 0; j < nj; ++j) {
        int cur = j, hops = 0;
        while (joint_parents[cur] >= 0 && hops <= nj) {
            cur = joint_parents[cur];
            ++hops;
        }
        if (hops > nj)
            throw DomainError("kinematic tree contains a cycle through joint " + std::to_string(j));
    }
    for (const auto &rt : joint_rest_transforms) {
        const Mat3 err = rt.rotation.transpose() * rt.rotation - Mat3::Identity();
        if (err.cwiseAbs().maxCoeff() > 1e-6 || rt.rotation.determinant() < 0.0)
            throw DomainError("joint rest transform is not a rotation");
    }
    if (static_cast<int>(skin_weights.size()) != nv)
        throw DimensionError("skin_weights rows differ from vertex count");
    for (int v = 0; v < nv; ++v) {
        double sum = 0.0;
        for (const auto &jw : skin_weights[v]) {
            if (jw.joint < 0 || jw.joint >= nj)
                throw DimensionError("skin weight of vertex " + std::to_string(v) +
                                     " references joint " + std::to_string(jw.joint));
            if (!(jw.weight >= 0.0))
                throw DomainError("negative skin weight at vertex " + std::to_string(v));
            sum += jw.weight;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw DomainError("skin weights of vertex " + std::to_string(v) + " sum to " +
                              std::to_string(sum));
    }
    if (!face_side_labels.empty() && face_side_labels.size() != faces.size())
        throw DimensionError("face_side_labels size differs from face count");
}

std::vector<int> ArticulatedMesh::joint_order() const {
    const int nj = joint_count();
    std::vector<int> depth(nj, 0);
    for (int j = 0; j < nj; ++j)
        for (int cur = j; joint_parents[cur] >= 0 && depth[j] <= nj; cur = joint_parents[cur])
            ++depth[j];
    std::vector<int> order(nj);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return depth[a] < depth[b]; });
    return order;
}

void PoseFrame::normalize() {
    for (Vec3 &w : joint_rotations) {
        if (!w.allFinite())
            throw DomainError("pose contains a non-finite rotation");
        const double theta = w.norm();
        if (theta >= 2.0 * kPi)
            w *= std::fmod(theta, 2.0 * kPi) / theta;
    }
    if (!root_translation.allFinite())
        throw DomainError("pose contains a non-finite root translation");
}

bool DeformedMesh::has_degenerate() const {
    return std::any_of(degenerate.begin(), degenerate.end(), [](std::uint8_t d) { return d != 0; });
}

Mat3 axis_angle_to_matrix(const Vec3 &omega) {
    const auto k = rodrigues_coefficients(omega.norm());
    const Mat3 K = skew(omega);
    return Mat3::Identity() + k.a * K + k.b * K * K;
}

std::array<Mat3, 3> axis_angle_jacobian(const Vec3 &omega) {
    const auto k = rodrigues_coefficients(omega.norm());
    const Mat3 K = skew(omega);
    const Mat3 K2 = K * K;
    std::array<Mat3, 3> out;
    for (int i = 0; i < 3; ++i) {
        const Mat3 E = skew(Vec3::Unit(i));
        out[i] = k.a * E + k.b * (E * K + K * E) + k.da * omega[i] * K + k.db * omega[i] * K2;
    }
    return out;
}

std::vector<RigidTransform> forward_kinematics(const ArticulatedMesh &mesh, const PoseFrame &pose) {
    const int nj = mesh.joint_count();
    if (static_cast<int>(pose.joint_rotations.size()) != nj)
        throw DimensionError("pose has " + std::to_string(pose.joint_rotations.size()) +
                             " joints, rig has " + std::to_string(nj));
    std::vector<RigidTransform> world(nj);
    for (int j : mesh.joint_order()) {
        RigidTransform local = mesh.joint_rest_transforms[j];
        local.rotation = local.rotation * axis_angle_to_matrix(pose.joint_rotations[j]);
        const int p = mesh.joint_parents[j];
        if (p < 0) {
            local.translation += pose.root_translation;
            world[j] = local;
        } else {
            world[j] = world[p] * local;
        }
    }
    return world;
}

std::vector<RigidTransform> rest_world_transforms(const ArticulatedMesh &mesh) {
    return forward_kinematics(mesh, PoseFrame::zero(mesh.joint_count()));
}

std::vector<RigidTransform> skinning_transforms(const ArticulatedMesh &mesh,
                                                std::span<const RigidTransform> world) {
    if (static_cast<int>(world.size()) != mesh.joint_count())
        throw DimensionError("transform count differs from joint count");
    const auto rest = rest_world_transforms(mesh);
    std::vector<RigidTransform> out(world.size());
    for (std::size_t j = 0; j < world.size(); ++j)
        out[j] = world[j] * rest[j].inverse();
    return out;
}

DeformedMesh skin_lbs(const ArticulatedMesh &mesh, std::span<const RigidTransform> transforms,
                      double areaEpsilon) {
    return skin_lbs(mesh, transforms, mesh.rest_vertices, areaEpsilon);
}

DeformedMesh skin_lbs(const ArticulatedMesh &mesh, std::span<const RigidTransform> transforms,
                      std::span<const Vec3> canonicalVertices, double areaEpsilon) {
    if (static_cast<int>(transforms.size()) != mesh.joint_count())
        throw DimensionError("transform count differs from joint count");
    if (static_cast<int>(canonicalVertices.size()) != mesh.vertex_count())
        throw DimensionError("canonical vertex count differs from mesh");
    std::vector<Vec3> verts(canonicalVertices.size());
    for (std::size_t v = 0; v < verts.size(); ++v) {
        const auto &row = mesh.skin_weights[v];
        if (row.size() == 1 && row[0].weight == 1.0) {
            verts[v] = transforms[row[0].joint].apply(canonicalVertices[v]);
            continue;
        }
        Vec3 acc = Vec3::Zero();
        for (const auto &jw : row)
            acc += jw.weight * transforms[jw.joint].apply(canonicalVertices[v]);
        verts[v] = acc;
    }
    return build_surface(mesh.faces, std::move(verts), areaEpsilon);
}

DeformedMesh build_surface(std::span<const std::array<int, 3>> faces, std::vector<Vec3> vertices,
                           double areaEpsilon) {
    DeformedMesh out;
    out.vertices = std::move(vertices);
    out.faces.assign(faces.begin(), faces.end());
    const std::size_t nf = faces.size();
    out.face_normals.resize(nf);
    out.face_frames.resize(nf);
    out.face_areas.resize(nf);
    out.degenerate.assign(nf, 0);
    for (std::size_t f = 0; f < nf; ++f) {
        const auto [a, b, c] = out.triangle(static_cast<int>(f));
        const Vec3 e1 = b - a, e2 = c - a;
        const Vec3 cr = e1.cross(e2);
        const double area = 0.5 * cr.norm();
        out.face_areas[f] = area;
        if (!(area >= areaEpsilon) || e1.norm() <= 0.0) {
            out.degenerate[f] = 1;
            out.face_normals[f] = Vec3::UnitZ();
            continue;
        }
        const Vec3 u = e1.normalized();
        const Vec3 wperp = e2 - e2.dot(u) * u;
        out.face_frames[f] = {u, wperp.normalized()};
        out.face_normals[f] = cr / cr.norm();
    }
    return out;
}

FaceFrame gram_schmidt_frame(const Vec3 &e1, const Vec3 &e2, double epsilon) {
    const double n1 = e1.norm();
    if (!(n1 > epsilon) || !(e1.cross(e2).norm() > epsilon * std::max(1.0, n1)))
        throw DegenerateTriangleError("edges are collinear or vanishing");
    const Vec3 u = e1 / n1;
    const Vec3 wperp = e2 - e2.dot(u) * u;
    return {u, wperp / wperp.norm()};
}

ClosestPoint closest_point_on_triangle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
    // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0)
        return {a, Vec3(1, 0, 0)};
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3)
        return {b, Vec3(0, 1, 0)};
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return {a + v * ab, Vec3(1.0 - v, v, 0.0)};
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6)
        return {c, Vec3(0, 0, 1)};
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return {a + w * ac, Vec3(1.0 - w, 0.0, w)};
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {b + w * (c - b), Vec3(0.0, 1.0 - w, w)};
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {a + ab * v + ac * w, Vec3(1.0 - v - w, v, w)};
}

TriangleLocator::TriangleLocator(std::span<const Vec3> vertices,
                                 std::span<const std::array<int, 3>> faces,
                                 std::span<const std::uint8_t> skipFaces)
    : mVertices(vertices.begin(), vertices.end()), mFaces(faces.begin(), faces.end()) {
    mBoxes.resize(mFaces.size());
    for (std::size_t f = 0; f < mFaces.size(); ++f) {
        if (!skipFaces.empty() && skipFaces[f])
            continue;
        mOrder.push_back(static_cast<int>(f));
        Eigen::AlignedBox3d box;
        for (int idx : mFaces[f])
            box.extend(mVertices[idx]);
        mBoxes[f] = box;
    }
    if (mOrder.empty())
        throw DegenerateTriangleError("no non-degenerate face to query");
    mNodes.reserve(2 * mOrder.size());
    build(0, static_cast<int>(mOrder.size()));
}

int TriangleLocator::build(int begin, int end) {
    const int id = static_cast<int>(mNodes.size());
    mNodes.push_back({});
    Eigen::AlignedBox3d box;
    for (int i = begin; i < end; ++i)
        box.extend(mBoxes[mOrder[i]]);
    mNodes[id].box = box;
    if (end - begin <= 4) {
        mNodes[id].begin = begin;
        mNodes[id].end = end;
        return id;
    }
    int axis;
    box.sizes().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(mOrder.begin() + begin, mOrder.begin() + mid, mOrder.begin() + end,
                     [&](int a, int b) {
                         const double ca = mBoxes[a].center()[axis], cb = mBoxes[b].center()[axis];
                         return ca < cb || (ca == cb && a < b);
                     });
    const int left = build(begin, mid);
    const int right = build(mid, end);
    mNodes[id].left = left;
    mNodes[id].right = right;
    return id;
}

TriangleHit TriangleLocator::closest(const Vec3 &point) const {
    TriangleHit best;
    double bestSq = std::numeric_limits<double>::infinity();
    std::vector<int> stack{0};
    stack.reserve(64);
    while (!stack.empty()) {
        const Node &node = mNodes[stack.back()];
        stack.pop_back();
        if (node.box.squaredExteriorDistance(point) > bestSq)
            continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int f = mOrder[i];
                const auto &tri = mFaces[f];
                const ClosestPoint cp = closest_point_on_triangle(point, mVertices[tri[0]],
                                                                  mVertices[tri[1]], mVertices[tri[2]]);
                const double dsq = (cp.point - point).squaredNorm();
                if (dsq < bestSq || (dsq == bestSq && f < best.face)) {
                    bestSq = dsq;
                    best.face = f;
                    best.bary = cp.bary;
                }
            }
            continue;
        }
        const double dl = mNodes[node.left].box.squaredExteriorDistance(point);
        const double dr = mNodes[node.right].box.squaredExteriorDistance(point);
        // Push the farther child first so the nearer one is visited next.
        if (dl <= dr) {
            stack.push_back(node.right);
            stack.push_back(node.left);
        } else {
            stack.push_back(node.left);
            stack.push_back(node.right);
        }
    }
    best.distance = std::sqrt(bestSq);
    return best;
}

TriangleHit closest_triangle(const DeformedMesh &surface, const Vec3 &point) {
    return TriangleLocator(surface.vertices, surface.faces, surface.degenerate).closest(point);
}

std::vector<FaceSide> label_face_sides(const ArticulatedMesh &mesh, const Vec3 &palmAxis) {
    std::vector<FaceSide> out(mesh.faces.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto &t = mesh.faces[f];
        const Vec3 n = (mesh.rest_vertices[t[1]] - mesh.rest_vertices[t[0]])
                           .cross(mesh.rest_vertices[t[2]] - mesh.rest_vertices[t[0]]);
        out[f] = n.dot(palmAxis) > 0.0 ? FaceSide::palm : FaceSide::back;
    }
    return out;
}

double median_edge_length(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces) {
    std::vector<double> lengths;
    lengths.reserve(faces.size() * 3);
    for (const auto &f : faces)
        for (int k = 0; k < 3; ++k)
            lengths.push_back((vertices[f[(k + 1) % 3]] - vertices[f[k]]).norm());
    if (lengths.empty())
        return 0.0;
    const auto mid = lengths.begin() + static_cast<std::ptrdiff_t>(lengths.size() / 2);
    std::nth_element(lengths.begin(), mid, lengths.end());
    return *mid;
}

} // namespace handsplat
