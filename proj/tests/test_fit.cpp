// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <handsplat/fit.hpp>
#include <handsplat/synthetic.hpp>

using namespace hs_test;

namespace {

// In-memory dataset rendered from a ground-truth model.
Dataset render_dataset(const AvatarModel &gt, const std::vector<PoseFrame> &poses, const std::vector<CameraView> &views) {
    Dataset d;
    d.mesh = gt.mesh;
    d.poses = poses;
    d.views = views;
    d.frames.resize(views.size());
    for (std::size_t v = 0; v < views.size(); ++v)
        for (std::size_t t = 0; t < poses.size(); ++t)
            d.frames[v].push_back(
                render_frame(gt, poses[t], -1, views[v].camera, RenderSettings{}, {nullptr, true}).image.color());
    d.object_masks.resize(poses.size());
    d.hand_masks.resize(poses.size());
    return d;
}

// One triangle facing a single camera, lit by a constant environment.
struct TriangleScene {
    AvatarModel gt;
    Dataset data;
};

TriangleScene triangle_scene(int gaussiansPerFace) {
    TriangleScene s;
    ArticulatedMesh mesh = rigid_mesh({Vec3(-0.02, -0.015, 0), Vec3(0.02, -0.015, 0), Vec3(0, 0.02, 0)}, {{0, 1, 2}});
    Rng rng(11);
    ModelOptions mo;
    mo.hidden = {4};
    mo.surface.gaussians_per_face = gaussiansPerFace;
    s.gt = create_model(mesh, 3, mo, rng);
    for (auto &layer : s.gt.lighting.layers())
        layer.weight.setZero();
    const Vec3 bary[4] = {Vec3(0.6, 0.2, 0.2), Vec3(0.2, 0.6, 0.2), Vec3(0.2, 0.2, 0.6), Vec3(1, 1, 1) / 3.0};
    const Vec3 colors[4] = {Vec3(0.8, 0.2, 0.1), Vec3(0.1, 0.7, 0.3), Vec3(0.2, 0.3, 0.9), Vec3(0.6, 0.6, 0.2)};
    for (std::size_t i = 0; i < s.gt.gaussians.size(); ++i) {
        SurfaceGaussian &g = s.gt.gaussians[i];
        const Vec3 b = bary[i % 4];
        g.bary_logits = Vec3(std::log(b.x()), std::log(b.y()), std::log(b.z()));
        g.log_scales = Vec2::Constant(std::log(0.008));
        g.opacity_logit = logit(0.95);
        for (int c = 0; c < 3; ++c)
            g.albedo_logits[c] = logit(colors[i % 4][c]);
    }
    CameraView view;
    view.name = "view0";
    view.camera.width = view.camera.height = 24;
    view.camera.fx = view.camera.fy = 40.0;
    view.camera.cx = view.camera.cy = 11.5;
    view.camera.world_to_camera = look_at(Vec3(0, 0, 0.1), Vec3::Zero(), Vec3::UnitY());
    s.data = render_dataset(s.gt, std::vector<PoseFrame>(3, PoseFrame::zero(1)), {view});
    return s;
}

RunConfig quiet_config(int iterations) {
    RunConfig cfg;
    cfg.optim.iterations = iterations;
    cfg.model.hidden = {4};
    cfg.schedule.control_start = iterations + 1;
    cfg.schedule.control_stop = iterations + 1;
    return cfg;
}

SurfaceGaussianSet reset_albedo(SurfaceGaussianSet set) {
    for (auto &g : set)
        g.albedo_logits.setZero();
    return set;
}

} // namespace

TEST(Fit, TriangleLossDecreases) {
    const TriangleScene s = triangle_scene(1);
    RunConfig cfg = quiet_config(60);
    AvatarModel start = s.gt;
    start.gaussians = reset_albedo(start.gaussians);
    for (auto &g : start.gaussians)
        g.log_scales = Vec2::Constant(std::log(0.004));
    FitOptions opts;
    opts.initial = &start;
    const FitResult r = fit(s.data, cfg, opts);
    ASSERT_EQ(r.losses.size(), 60u);
    auto window = [&](int k) {
        double sum = 0;
        for (int i = 10 * k; i < 10 * k + 10; ++i)
            sum += r.losses[i];
        return sum / 10;
    };
    for (int k = 0; k + 1 < 6; ++k)
        EXPECT_LT(window(k + 1), window(k)) << "window " << k;
}

TEST(Fit, DeterministicForSeed) {
    const TriangleScene s = triangle_scene(2);
    RunConfig cfg = quiet_config(25);
    cfg.seed = 5;
    cfg.schedule.control_start = 10;
    cfg.schedule.control_stop = 20;
    cfg.control.control_interval = 10;
    cfg.control.grad_threshold = 1e-9;
    const FitResult a = fit(s.data, cfg), b = fit(s.data, cfg);
    EXPECT_EQ(a.losses, b.losses);
    const ParameterLayout la(a.model), lb(b.model);
    EXPECT_EQ(la.gather(a.model), lb.gather(b.model));
    cfg.seed = 6;
    EXPECT_NE(fit(s.data, cfg).losses, a.losses);
}

TEST(Fit, AlbedoOnlyRecoversGroundTruth) {
    const TriangleScene s = triangle_scene(4);
    RunConfig cfg = quiet_config(400);
    cfg.optim.lr_bary = cfg.optim.lr_scale = cfg.optim.lr_rotation = cfg.optim.lr_offset = 0.0;
    cfg.optim.lr_opacity = cfg.optim.lr_lighting = cfg.optim.lr_pose = cfg.optim.lr_vertex_offsets = 0.0;
    cfg.optim.lr_albedo = 0.05;
    cfg.loss.lambda_dssim = 0.0;
    AvatarModel start = s.gt;
    start.gaussians = reset_albedo(start.gaussians);
    FitOptions opts;
    opts.initial = &start;
    const FitResult r = fit(s.data, cfg, opts);
    for (std::size_t i = 0; i < s.gt.gaussians.size(); ++i)
        for (int c = 0; c < 3; ++c)
            EXPECT_NEAR(sigmoid(r.model.gaussians[i].albedo_logits[c]), sigmoid(s.gt.gaussians[i].albedo_logits[c]), 0.02)
                << i << "/" << c;
}

TEST(Fit, WritesLogsAndCheckpoints) {
    const TriangleScene s = triangle_scene(1);
    RunConfig cfg = quiet_config(20);
    cfg.optim.checkpoint_interval = 10;
    cfg.schedule.control_start = 10;
    cfg.schedule.control_stop = 20;
    cfg.control.control_interval = 10;
    FitOptions opts;
    opts.out_dir = scratch_dir("fit_logs");
    fit(s.data, cfg, opts);
    EXPECT_TRUE(std::filesystem::exists(opts.out_dir / "loss.csv"));
    EXPECT_TRUE(std::filesystem::exists(opts.out_dir / "control.csv"));
    EXPECT_TRUE(std::filesystem::exists(opts.out_dir / "checkpoints" / "step_000010.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(opts.out_dir / "checkpoints" / "step_000020.ckpt"));
    const Checkpoint fin = load_checkpoint(opts.out_dir / "final.ckpt");
    EXPECT_EQ(fin.step, 20);
    EXPECT_EQ(parse_config(fin.config_toml).optim.iterations, 20);
}

TEST(Fit, HoldoutFramesAreNeverTrained) {
    const TriangleScene s = triangle_scene(1);
    RunConfig cfg = quiet_config(5);
    cfg.data.holdout_frames = {0, 2};
    EXPECT_EQ(training_frames(s.data, cfg), (std::vector<int>{1}));
    cfg.data.holdout_frames = {0, 1, 2};
    EXPECT_THROW(training_frames(s.data, cfg), ConfigError);
}

TEST(RemapOptimizer, FollowsProvenance) {
    const TriangleScene s = triangle_scene(2);
    AvatarModel a = s.gt;
    const ParameterLayout from(a);
    OptimizerState st;
    st.reset(from.size());
    for (std::size_t i = 0; i < st.m.size(); ++i) {
        st.m[i] = static_cast<double>(i);
        st.v[i] = 0.5 * static_cast<double>(i);
    }
    st.step = 3;
    AvatarModel b = a;
    b.gaussians = {a.gaussians[1], a.gaussians[1], a.gaussians[0]};
    const ParameterLayout to(b);
    const std::vector<int> prov{1, 1, 0};
    const OptimizerState out = remap_optimizer(st, from, to, prov);
    EXPECT_EQ(out.step, 3);
    const auto &fo = from.block("gaussians.albedo_logits"), &tb = to.block("gaussians.albedo_logits");
    for (int k = 0; k < 3; ++k)
        for (int c = 0; c < 3; ++c)
            EXPECT_EQ(out.m[tb.offset + 3 * k + c], st.m[fo.offset + 3 * prov[k] + c]);
    const auto &fl = from.block("lighting_net.layer0.weight"), &tl = to.block("lighting_net.layer0.weight");
    for (std::size_t i = 0; i < fl.size; ++i)
        EXPECT_EQ(out.v[tl.offset + i], st.v[fl.offset + i]);
}
