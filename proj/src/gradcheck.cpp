// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/gradcheck.hpp>

#include <algorithm>

namespace handsplat {

GradcheckScene make_gradcheck_scene(Rng &rng, const GradcheckSceneOptions &options) {
    GradcheckScene sc;
    ArticulatedMesh mesh;
    const double xs[3] = {-0.03, 0.0, 0.03};
    for (double y : {-0.015, 0.015})
        for (double x : xs)
            mesh.rest_vertices.emplace_back(x + rng.uniform(-0.003, 0.003), y + rng.uniform(-0.003, 0.003),
                                            rng.uniform(-0.004, 0.004));
    mesh.faces = {{0, 1, 4}, {0, 4, 3}, {1, 2, 5}, {1, 5, 4}};
    mesh.joint_parents = {-1, 0};
    RigidTransform root;
    root.translation = Vec3(-0.03, 0.0, 0.0);
    RigidTransform child;
    child.translation = Vec3(0.03, 0.0, 0.0);
    mesh.joint_rest_transforms = {root, child};
    for (int v = 0; v < 6; ++v) {
        const int col = v % 3;
        const double w1 = col == 0 ? 0.0 : (col == 1 ? rng.uniform(0.2, 0.8) : rng.uniform(0.7, 1.0));
        std::vector<JointWeight> row;
        if (w1 < 1.0)
            row.push_back({0, 1.0 - w1});
        if (w1 > 0.0)
            row.push_back({1, w1});
        mesh.skin_weights.push_back(row);
    }
    for (int f = 0; f < 4; ++f)
        mesh.face_side_labels.push_back(rng.uniform() < 0.5 ? FaceSide::palm : FaceSide::back);

    ModelOptions mo;
    mo.sh_order = options.sh_order;
    mo.hidden = options.hidden;
    mo.include_root_translation = rng.uniform() < 0.5;
    mo.output_weight_scale = 0.3;
    mo.base_irradiance = Vec3(1.0, 0.9, 0.8);
    sc.model = create_model(mesh, 2, mo, rng);

    auto &net = sc.model.lighting;
    auto &out = net.layers().back();
    const int nb = sh_basis_count(options.sh_order);
    for (int half = 0; half < 2; ++half)
        for (int c = 0; c < 3; ++c)
            for (int k = 1; k < nb; ++k)
                out.bias[half * 3 * nb + c * nb + k] += rng.uniform(-0.08, 0.08);

    sc.model.gaussians.clear();
    for (int i = 0; i < options.gaussians; ++i) {
        SurfaceGaussian g;
        g.face_id = i % 4;
        g.bary_logits = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.5;
        g.log_scales = Vec2(std::log(rng.uniform(0.004, 0.008)), std::log(rng.uniform(0.004, 0.008)));
        g.rotation_phi = rng.uniform(0.0, kPi);
        g.offset_logit = rng.normal();
        g.albedo_logits = Vec3(rng.normal(), rng.normal(), rng.normal());
        g.opacity_logit = logit(rng.uniform(0.3, 0.8));
        sc.model.gaussians.push_back(g);
    }
    for (auto &o : sc.model.vertex_offsets)
        o = Vec3(rng.normal(), rng.normal(), rng.normal()) * 1e-3;
    for (auto &r : sc.model.pose_refinements) {
        for (auto &v : r.joints)
            v = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.05;
        r.root = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.002;
    }

    sc.pose = PoseFrame::zero(2);
    for (auto &v : sc.pose.joint_rotations)
        v = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.2;
    sc.pose.root_translation = Vec3(0.03, 0.0, 0.0) + Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.003;
    sc.frame = static_cast<int>(rng.index(2));

    const int n = options.image_size;
    sc.camera.width = sc.camera.height = n;
    sc.camera.fx = sc.camera.fy = 50.0 * n / 16.0;
    sc.camera.cx = sc.camera.cy = 0.5 * (n - 1);
    sc.camera.world_to_camera.rotation =
        axis_angle_to_matrix(Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.1);
    sc.camera.world_to_camera.translation = Vec3(0.0, 0.0, 0.3);

    sc.target = Image(n, n, 3);
    for (double &v : sc.target.data)
        v = rng.uniform();
    return sc;
}

GradcheckReport gradcheck(const GradcheckScene &scene, const GradcheckTolerance &tol) {
    const ParameterLayout layout(scene.model);
    std::vector<double> analytic(layout.size(), 0.0);
    evaluate_frame(scene.model, layout, scene.pose, scene.frame, scene.camera, scene.target, scene.render,
                   scene.weights, analytic);

    AvatarModel work = scene.model;
    std::vector<double> x = layout.gather(scene.model);
    auto loss = [&](std::span<const double> p) {
        layout.scatter(p, work);
        return evaluate_frame(work, layout, scene.pose, scene.frame, scene.camera, scene.target, scene.render,
                              scene.weights)
            .loss.total;
    };

    GradcheckReport report;
    for (const auto &b : layout.blocks()) {
        BlockCheck &bc = report.blocks[b.name];
        for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
            const double num = finite_difference(loss, x, i, tol.step);
            const double a = analytic[i];
            const double err = std::abs(a - num);
            const double scale = std::max(std::abs(a), std::abs(num));
            ++bc.checked;
            bc.max_abs_error = std::max(bc.max_abs_error, err);
            bc.max_gradient = std::max(bc.max_gradient, std::abs(a));
            if (err > tol.absolute && scale > 0.0)
                bc.max_rel_error = std::max(bc.max_rel_error, err / scale);
            if (err > std::max(tol.absolute, tol.relative * scale)) {
                ++bc.failures;
                ++report.failures;
            }
        }
    }
    return report;
}

} // namespace handsplat
