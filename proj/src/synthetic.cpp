// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/synthetic.hpp>

#include <handsplat/config.hpp>

#include <algorithm>
#include <fstream>
#include <map>

namespace handsplat {

namespace fs = std::filesystem;

SyntheticKind parse_synthetic_kind(const std::string &name) {
    if (name == "quad")
        return SyntheticKind::quad;
    if (name == "icosphere")
        return SyntheticKind::icosphere;
    if (name == "two-bone-cylinder")
        return SyntheticKind::two_bone_cylinder;
    throw ConfigError("unknown synthetic kind '" + name + "' (quad, icosphere, two-bone-cylinder)");
}

std::string to_string(SyntheticKind kind) {
    switch (kind) {
    case SyntheticKind::quad:
        return "quad";
    case SyntheticKind::icosphere:
        return "icosphere";
    case SyntheticKind::two_bone_cylinder:
        return "two-bone-cylinder";
    }
    return "?";
}

void icosphere(int levels, double radius, std::vector<Vec3> &vertices, std::vector<std::array<int, 3>> &faces) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (auto &v : vertices)
        v.normalize();
    for (int level = 0; level < levels; ++level) {
        std::map<std::pair<int, int>, int> midpoints;
        auto midpoint = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoints.find(key);
            if (it != midpoints.end())
                return it->second;
            vertices.push_back((vertices[a] + vertices[b]).normalized());
            const int id = static_cast<int>(vertices.size()) - 1;
            midpoints.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto &f : faces) {
            const int ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }
    for (auto &f : faces) {
        const Vec3 n = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
        if (n.dot(vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) < 0.0)
            std::swap(f[1], f[2]);
    }
    for (auto &v : vertices)
        v *= radius;
}

RigidTransform look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    RigidTransform t;
    t.rotation.row(0) = right.transpose();
    t.rotation.row(1) = down.transpose();
    t.rotation.row(2) = forward.transpose();
    t.translation = -(t.rotation * eye);
    return t;
}

namespace {

struct SceneRecipe {
    ArticulatedMesh mesh;
    Vec3 palm_axis = Vec3::UnitZ();
    std::vector<PoseFrame> poses;
    std::vector<CameraView> views;
    std::vector<int> holdout;
    int gaussians_per_face = 1;
    bool checker = false;
};

Camera make_camera(int size, double focal, const RigidTransform &w2c) {
    Camera c;
    c.width = c.height = size;
    c.fx = c.fy = focal;
    c.cx = c.cy = 0.5 * (size - 1);
    c.world_to_camera = w2c;
    return c;
}

// Cameras on a ring around `target`, elevated by `elevation` radians.
std::vector<CameraView> ring_views(const Vec3 &target, double distance, double elevation,
                                   std::span<const double> azimuths, int size, double focal) {
    std::vector<CameraView> views;
    for (std::size_t i = 0; i < azimuths.size(); ++i) {
        const double az = azimuths[i];
        const Vec3 dir(std::cos(elevation) * std::sin(az), -std::cos(elevation) * std::cos(az), std::sin(elevation));
        CameraView v;
        v.name = "view" + std::to_string(i);
        v.camera = make_camera(size, focal, look_at(target + distance * dir, target, Vec3::UnitZ()));
        views.push_back(std::move(v));
    }
    return views;
}

SceneRecipe quad_recipe() {
    SceneRecipe r;
    const double h = 0.02;
    r.mesh.rest_vertices = {{-h, -h, 0}, {h, -h, 0}, {h, h, 0}, {-h, h, 0}};
    r.mesh.faces = {{0, 1, 2}, {0, 2, 3}};
    r.mesh.joint_parents = {-1};
    r.mesh.joint_rest_transforms = {RigidTransform::identity()};
    r.mesh.skin_weights.assign(4, {JointWeight{0, 1.0}});
    for (int t = 0; t < 5; ++t) {
        PoseFrame p = PoseFrame::zero(1);
        const double a = 0.25 * (t - 2) / 2.0;
        p.joint_rotations[0] = Vec3(a, 0.5 * a, 0.0);
        r.poses.push_back(p);
    }
    // Cameras above the quad looking down -z.
    const double az[] = {-0.5, 0.0, 0.5};
    for (std::size_t i = 0; i < 3; ++i) {
        const Vec3 eye(0.08 * std::sin(az[i]), -0.03, 0.15);
        CameraView v;
        v.name = "view" + std::to_string(i);
        v.camera = make_camera(32, 60.0, look_at(eye, Vec3::Zero(), Vec3::UnitY()));
        r.views.push_back(std::move(v));
    }
    r.holdout = {4};
    r.gaussians_per_face = 4;
    return r;
}

SceneRecipe icosphere_recipe() {
    SceneRecipe r;
    icosphere(2, 0.05, r.mesh.rest_vertices, r.mesh.faces);
    // Root at the centre; a child joint bends the upper cap.
    r.mesh.joint_parents = {-1, 0};
    RigidTransform child;
    child.translation = Vec3(0.0, 0.0, 0.02);
    r.mesh.joint_rest_transforms = {RigidTransform::identity(), child};
    for (const Vec3 &v : r.mesh.rest_vertices) {
        const double s = std::clamp((v.z() / 0.05 + 0.2) / 0.8, 0.0, 1.0);
        const double w = s * s * (3.0 - 2.0 * s);
        std::vector<JointWeight> row;
        if (w < 1.0)
            row.push_back({0, 1.0 - w});
        if (w > 0.0)
            row.push_back({1, w});
        r.mesh.skin_weights.push_back(row);
    }
    for (int t = 0; t < 20; ++t) {
        const double ph = 2.0 * kPi * t / 20.0;
        PoseFrame p = PoseFrame::zero(2);
        p.joint_rotations[0] = Vec3(0.15 * std::sin(2.0 * ph), 0.1 * std::cos(ph), 0.6 * std::sin(ph));
        p.joint_rotations[1] = Vec3(0.25 * std::sin(ph + 0.5), 0.15 * std::cos(ph), 0.0);
        r.poses.push_back(p);
    }
    const double az[] = {-0.9, 0.0, 0.9};
    r.views = ring_views(Vec3::Zero(), 0.25, 0.3, az, 96, 175.0);
    r.holdout = {4, 9, 14, 19};
    r.checker = true;
    return r;
}

SceneRecipe cylinder_recipe() {
    SceneRecipe r;
    const int rings = 11, segments = 12;
    const double length = 0.1, radius = 0.012;
    for (int i = 0; i < rings; ++i)
        for (int k = 0; k < segments; ++k) {
            const double a = 2.0 * kPi * k / segments;
            r.mesh.rest_vertices.emplace_back(length * i / (rings - 1), radius * std::cos(a), radius * std::sin(a));
        }
    for (int i = 0; i + 1 < rings; ++i)
        for (int k = 0; k < segments; ++k) {
            const int a = i * segments + k, b = i * segments + (k + 1) % segments;
            const int c = a + segments, d = b + segments;
            r.mesh.faces.push_back({a, c, d});
            r.mesh.faces.push_back({a, d, b});
        }
    for (auto &f : r.mesh.faces) {
        const Vec3 &p = r.mesh.rest_vertices[f[0]];
        const Vec3 n = (r.mesh.rest_vertices[f[1]] - p).cross(r.mesh.rest_vertices[f[2]] - p);
        if (n.dot(Vec3(0.0, p.y(), p.z())) < 0.0)
            std::swap(f[1], f[2]);
    }
    r.mesh.joint_parents = {-1, 0};
    RigidTransform child;
    child.translation = Vec3(length / 2, 0.0, 0.0);
    r.mesh.joint_rest_transforms = {RigidTransform::identity(), child};
    for (const Vec3 &v : r.mesh.rest_vertices) {
        const double s = std::clamp((v.x() - 0.04) / 0.02, 0.0, 1.0);
        const double w = s * s * (3.0 - 2.0 * s);
        std::vector<JointWeight> row;
        if (w < 1.0)
            row.push_back({0, 1.0 - w});
        if (w > 0.0)
            row.push_back({1, w});
        r.mesh.skin_weights.push_back(row);
    }
    for (int t = 0; t < 10; ++t) {
        PoseFrame p = PoseFrame::zero(2);
        p.joint_rotations[0] = Vec3(0.2 * std::sin(0.6 * t), 0.0, 0.0);
        p.joint_rotations[1] = Vec3(0.0, 0.0, 0.8 * std::sin(kPi * t / 9.0));
        r.poses.push_back(p);
    }
    const double az[] = {-0.6, 0.0, 0.6};
    r.views = ring_views(Vec3(0.05, 0.0, 0.0), 0.3, 0.9, az, 64, 150.0);
    r.holdout = {3, 7};
    r.checker = true;
    return r;
}

SceneRecipe recipe(SyntheticKind kind) {
    switch (kind) {
    case SyntheticKind::quad:
        return quad_recipe();
    case SyntheticKind::icosphere:
        return icosphere_recipe();
    case SyntheticKind::two_bone_cylinder:
        return cylinder_recipe();
    }
    throw ConfigError("unknown synthetic kind");
}

// Order-2 environment: a constant term plus random low bands, rescaled so the
// irradiance stays within [0.3, 0.98] over the sphere.
ShCoefficients ground_truth_environment(const Vec3 &dc, Rng &rng) {
    ShCoefficients env = constant_environment(2, dc);
    ShCoefficients bands = ShCoefficients::zeros(2);
    for (int c = 0; c < 3; ++c)
        for (int k = 1; k < bands.basis_count(); ++k)
            bands.at(c, k) = rng.uniform(-0.25, 0.25);
    const int samples = 2000;
    double scale = 1.0;
    for (int i = 0; i < samples; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / samples;
        const double a = kPi * (3.0 - std::sqrt(5.0)) * i;
        const double rr = std::sqrt(1.0 - z * z);
        const Vec3 n(rr * std::cos(a), rr * std::sin(a), z);
        const Vec3 b = sh_irradiance(bands, n);
        for (int c = 0; c < 3; ++c) {
            if (b[c] > 0.0)
                scale = std::min(scale, (0.98 - dc[c]) / b[c]);
            else if (b[c] < 0.0)
                scale = std::min(scale, (dc[c] - 0.3) / -b[c]);
        }
    }
    for (int c = 0; c < 3; ++c)
        for (int k = 1; k < env.basis_count(); ++k)
            env.at(c, k) = scale * bands.at(c, k);
    return env;
}

Vec3 checker_albedo(const Vec3 &p, bool checker) {
    if (!checker)
        return Vec3(0.7, 0.45, 0.3);
    const double lon = std::atan2(p.y(), p.x()) + kPi;
    const double lat = std::atan2(p.z(), std::hypot(p.x(), p.y()));
    const int a = static_cast<int>(std::floor(lon / (kPi / 4.0)));
    const int b = static_cast<int>(std::floor((lat + kPi / 2.0) / (kPi / 4.0)));
    return ((a + b) % 2 == 0) ? Vec3(0.85, 0.35, 0.25) : Vec3(0.2, 0.5, 0.8);
}

Vec3 logit3(const Vec3 &p) { return Vec3(logit(p.x()), logit(p.y()), logit(p.z())); }

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text))
        throw IoError("cannot write " + path.string());
}

} // namespace

SyntheticScene build_synthetic(SyntheticKind kind, std::uint64_t seed) {
    SceneRecipe r = recipe(kind);
    r.mesh.face_side_labels = label_face_sides(r.mesh, r.palm_axis);
    r.mesh.validate();
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(kind) + 1);

    SyntheticScene scene;
    AvatarModel &m = scene.ground_truth;
    m.mesh = r.mesh;
    m.vertex_offsets.assign(r.mesh.rest_vertices.size(), Vec3::Zero());
    m.surface = SurfaceSettings{};
    const DeformedMesh canonical = m.canonical_surface();
    for (int f = 0; f < canonical.face_count(); ++f) {
        const double base = std::log(m.surface.init_scale_factor * std::sqrt(canonical.face_areas[f]) /
                                     std::sqrt(double(r.gaussians_per_face)));
        for (int k = 0; k < r.gaussians_per_face; ++k) {
            SurfaceGaussian g;
            g.face_id = f;
            for (int i = 0; i < 3; ++i)
                g.bary_logits[i] = rng.uniform(-0.3, 0.3);
            if (r.gaussians_per_face > 1)
                g.bary_logits[k % 3] += 1.2 * (k < 3);
            g.log_scales = Vec2(base + rng.uniform(-0.1, 0.1), base + rng.uniform(-0.1, 0.1));
            g.rotation_phi = rng.uniform(0.0, kPi);
            g.offset_logit = rng.uniform(-1.0, 1.0);
            const Vec3 anchor = canonical_anchor(g, canonical, m.surface.z_max);
            Vec3 albedo = checker_albedo(anchor, r.checker);
            for (int c = 0; c < 3; ++c)
                albedo[c] = std::clamp(albedo[c] + rng.uniform(-0.03, 0.03), 0.05, 0.95);
            g.albedo_logits = logit3(albedo);
            g.opacity_logit = logit(rng.uniform(0.9, 0.95));
            m.gaussians.push_back(g);
        }
    }
    const ShCoefficients palm = ground_truth_environment(Vec3(0.72, 0.7, 0.66), rng);
    const ShCoefficients back = ground_truth_environment(Vec3(0.6, 0.64, 0.72), rng);
    DenseLayer out;
    out.weight = Eigen::MatrixXd::Zero(2 * 3 * palm.basis_count(), 3 * r.mesh.joint_count());
    out.bias.resize(out.weight.rows());
    for (std::size_t i = 0; i < palm.coeffs.size(); ++i) {
        out.bias[static_cast<Eigen::Index>(i)] = palm.coeffs[i];
        out.bias[static_cast<Eigen::Index>(palm.coeffs.size() + i)] = back.coeffs[i];
    }
    m.lighting = LightingNet::from_layers(r.mesh.joint_count(), 2, Activation::softplus, false, {out});
    m.reset_refinements(static_cast<int>(r.poses.size()));
    m.validate();

    scene.poses = r.poses;
    scene.views = r.views;
    scene.holdout_frames = r.holdout;
    return scene;
}

SyntheticScene make_synthetic(SyntheticKind kind, const fs::path &out, std::uint64_t seed) {
    SyntheticScene scene = build_synthetic(kind, seed);
    const AvatarModel &m = scene.ground_truth;
    try {
        fs::create_directories(out / "masks");
    } catch (const fs::filesystem_error &e) {
        throw IoError(e.what());
    }
    write_obj(out / "mesh.obj", m.mesh.rest_vertices, m.mesh.faces);
    write_rig(out / "rig.json", m.mesh, Vec3::UnitZ());
    write_poses(out / "poses.json", scene.poses);
    write_cameras(out / "cameras.json", scene.views);

    const RenderSettings settings;
    RenderOptions ropt;
    ropt.reference = true;
    for (const auto &view : scene.views) {
        fs::create_directories(out / "frames" / view.name);
        for (std::size_t t = 0; t < scene.poses.size(); ++t) {
            const int frame = static_cast<int>(t);
            const FrameRender fr = render_frame(m, scene.poses[t], frame, view.camera, settings, ropt);
            write_png(out / "frames" / view.name / frame_file_name(frame), fr.image.rgba(), PngDepth::sixteen);
            if (&view == &scene.views.front()) {
                const std::string stem = frame_file_name(frame).substr(0, 4);
                Image hand(fr.image.width, fr.image.height, 1);
                Image object(fr.image.width, fr.image.height, 1);
                for (int y = 0; y < hand.height; ++y)
                    for (int x = 0; x < hand.width; ++x) {
                        hand.at(x, y, 0) = fr.image.alpha[static_cast<std::size_t>(y) * hand.width + x] >= 0.5;
                        // A vertical bar sliding across the frame stands in for an object.
                        const int bar = (frame * hand.width) / static_cast<int>(scene.poses.size());
                        object.at(x, y, 0) = (x >= bar && x < bar + hand.width / 6) ? 1.0 : 0.0;
                    }
                write_png(out / "masks" / (stem + "_hand.png"), hand, PngDepth::eight);
                write_png(out / "masks" / (stem + "_object.png"), object, PngDepth::eight);
            }
        }
    }

    RunConfig cfg;
    cfg.seed = seed;
    cfg.data.holdout_frames = scene.holdout_frames;
    write_text(out / "config.toml", config_to_toml(cfg));

    Checkpoint ck;
    ck.model = m;
    ck.config_toml = config_to_toml(cfg);
    ck.seed = seed;
    save_checkpoint(out / "ground_truth.ckpt", ck);
    return scene;
}

} // namespace handsplat
