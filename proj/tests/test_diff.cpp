// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <handsplat/gradcheck.hpp>

using namespace hs_test;

namespace {

RenderedImage flat_render(int w, int h, double v) {
    RenderedImage r(w, h);
    std::fill(r.rgb.begin(), r.rgb.end(), v);
    std::fill(r.alpha.begin(), r.alpha.end(), 1.0);
    return r;
}

} // namespace

TEST(ReconstructionLoss, ZeroAtTarget) {
    Rng rng(1);
    RenderedImage r(12, 12);
    for (double &v : r.rgb)
        v = rng.uniform();
    Image target(12, 12, 3);
    target.data = r.rgb;
    std::vector<double> grad;
    const LossReport l = reconstruction_loss(r, target, 0.2, grad);
    EXPECT_NEAR(l.total, 0.0, 1e-12);
    EXPECT_NEAR(l.l1, 0.0, 1e-15);
    EXPECT_NEAR(l.dssim, 0.0, 1e-12);
    // The SSIM term is stationary at the optimum; L1 has a subgradient of zero there.
    double gmax = 0;
    for (double g : grad)
        gmax = std::max(gmax, std::abs(g));
    EXPECT_LT(gmax, 1e-12);
}

TEST(ReconstructionLoss, ConstantOffset) {
    const RenderedImage r = flat_render(8, 8, 0.6);
    const Image target(8, 8, 3, 0.5);
    const LossReport pure = reconstruction_loss(r, target, 0.0);
    EXPECT_NEAR(pure.l1, 0.1, 1e-12);
    EXPECT_NEAR(pure.total, 0.1, 1e-12);
    const LossReport mixed = reconstruction_loss(r, target, 0.2);
    EXPECT_NEAR(mixed.total, 0.8 * mixed.l1 + 0.2 * mixed.dssim, 1e-15);
    EXPECT_NEAR(mixed.dssim, 1.0 - ssim(r.color(), target), 1e-12);
}

TEST(ReconstructionLoss, ShapeMismatch) {
    EXPECT_THROW(reconstruction_loss(flat_render(4, 4, 0), Image(5, 4, 3), 0.2), DimensionError);
}

TEST(ReconstructionLoss, GradientMatchesFiniteDifferences) {
    Rng rng(2);
    RenderedImage r(9, 9);
    for (double &v : r.rgb)
        v = rng.uniform();
    Image target(9, 9, 3);
    for (double &v : target.data)
        v = rng.uniform();
    std::vector<double> grad;
    reconstruction_loss(r, target, 0.2, grad);
    for (std::size_t i = 0; i < r.rgb.size(); i += 3) {
        const double v = r.rgb[i];
        r.rgb[i] = v + 1e-7;
        const double p = reconstruction_loss(r, target, 0.2).total;
        r.rgb[i] = v - 1e-7;
        const double m = reconstruction_loss(r, target, 0.2).total;
        r.rgb[i] = v;
        EXPECT_NEAR((p - m) / 2e-7, grad[i], 1e-6);
    }
}

TEST(Gradcheck, RandomScenesPass) {
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
        const GradcheckScene scene = make_gradcheck_scene(rng);
        const GradcheckReport report = gradcheck(scene);
        for (const auto &[name, b] : report.blocks)
            EXPECT_EQ(b.failures, 0u) << name << " rel " << b.max_rel_error << " abs " << b.max_abs_error;
        EXPECT_TRUE(report.passed());
    }
}

TEST(Gradcheck, LargerSceneSingleOrderLighting) {
    Rng rng(4);
    GradcheckSceneOptions o;
    o.gaussians = 12;
    o.image_size = 20;
    o.sh_order = 1;
    EXPECT_TRUE(gradcheck(make_gradcheck_scene(rng, o)).passed());
}

TEST(EvaluateFrame, CulledGaussiansHaveZeroGradient) {
    Rng rng(5);
    GradcheckScene scene = make_gradcheck_scene(rng);
    // Turn the camera around: every splat falls behind it.
    Camera cam = scene.camera;
    cam.world_to_camera.rotation = axis_angle_to_matrix(Vec3(0, kPi, 0)) * cam.world_to_camera.rotation;
    cam.world_to_camera.translation = axis_angle_to_matrix(Vec3(0, kPi, 0)) * cam.world_to_camera.translation;
    const ParameterLayout layout(scene.model);
    std::vector<double> grad(layout.size(), 0.0);
    const FrameEvaluation ev = evaluate_frame(scene.model, layout, scene.pose, scene.frame, cam, scene.target,
                                              scene.render, scene.weights, grad);
    for (std::uint8_t v : ev.visible)
        EXPECT_EQ(v, 0);
    for (const ParameterBlock &b : layout.blocks()) {
        if (b.name.rfind("gaussians.", 0) != 0)
            continue;
        for (std::size_t i = b.offset; i < b.offset + b.size; ++i)
            EXPECT_EQ(grad[i], 0.0) << b.name;
    }
    for (double a : ev.image.alpha)
        EXPECT_EQ(a, 0.0);
}

TEST(ParameterLayout, GatherScatterRoundTrip) {
    Rng rng(6);
    GradcheckScene scene = make_gradcheck_scene(rng);
    const ParameterLayout layout(scene.model);
    std::vector<double> x = layout.gather(scene.model);
    ASSERT_EQ(x.size(), layout.size());
    for (double &v : x)
        v += rng.uniform(-0.1, 0.1);
    AvatarModel copy = scene.model;
    layout.scatter(x, copy);
    EXPECT_EQ(layout.gather(copy), x);

    std::size_t covered = 0;
    for (const ParameterBlock &b : layout.blocks()) {
        EXPECT_EQ(b.offset, covered);
        covered += b.size;
    }
    EXPECT_EQ(covered, layout.size());
    const std::size_t n = scene.model.gaussians.size();
    EXPECT_EQ(layout.block("gaussians.bary_logits").size, 3 * n);
    EXPECT_EQ(layout.block("gaussians.log_scales").size, 2 * n);
    EXPECT_EQ(layout.block("gaussians.opacity_logit").size, n);
    EXPECT_EQ(layout.block_of(0), "gaussians.bary_logits");
    EXPECT_EQ(layout.blocks().front().name, "gaussians.bary_logits");
}

TEST(ParameterLayout, LearningRatePrefixes) {
    Rng rng(7);
    const GradcheckScene scene = make_gradcheck_scene(rng);
    const ParameterLayout layout(scene.model);
    const auto lr = expand_learning_rates(layout, {{"gaussians.*", 0.1}, {"gaussians.albedo_logits", 0.5},
                                                   {"lighting_net.*", 0.01}});
    for (const ParameterBlock &b : layout.blocks()) {
        double expected = 0.0;
        if (b.name == "gaussians.albedo_logits")
            expected = 0.5;
        else if (b.name.rfind("gaussians.", 0) == 0)
            expected = 0.1;
        else if (b.name.rfind("lighting_net.", 0) == 0)
            expected = 0.01;
        for (std::size_t i = b.offset; i < b.offset + b.size; ++i)
            EXPECT_EQ(lr[i], expected) << b.name;
    }
}

TEST(FiniteDifference, QuadraticIsExact) {
    std::vector<double> x{1.0, -2.0, 0.5};
    const auto f = [](std::span<const double> v) { return 3 * v[0] * v[0] + v[0] * v[1] - 2 * v[2] * v[2]; };
    EXPECT_NEAR(finite_difference(f, x, 0, 1e-3), 6 * 1.0 - 2.0, 1e-9);
    EXPECT_NEAR(finite_difference(f, x, 1, 1e-3), 1.0, 1e-9);
    EXPECT_NEAR(finite_difference(f, x, 2, 1e-3), -2.0, 1e-9);
    EXPECT_EQ(x, (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, ZeroGradientLeavesParameters) {
    std::vector<double> p{1.0, 2.0}, g{0.0, 0.0}, lr{0.1, 0.1};
    OptimizerState s;
    s.reset(2);
    for (int i = 0; i < 5; ++i)
        adam_step(p, g, s, lr);
    EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(s.step, 5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<double> p{1.0, 2.0, 3.0}, g{0.5, -40.0, 1e-3}, lr{0.1, 0.01, 0.0};
    OptimizerState s;
    s.reset(3);
    adam_step(p, g, s, lr);
    EXPECT_NEAR(p[0], 0.9, 1e-12);
    EXPECT_NEAR(p[1], 2.01, 1e-12);
    EXPECT_EQ(p[2], 3.0);
    EXPECT_NE(s.m[2], 0.0);
}

TEST(Adam, ConvergesOnQuadratic) {
    std::vector<double> p{3.0, -2.0}, lr{0.05, 0.05};
    OptimizerState s;
    s.reset(2);
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> g{2 * (p[0] - 1.0), 8 * (p[1] + 0.5)};
        adam_step(p, g, s, lr);
    }
    EXPECT_NEAR(p[0], 1.0, 1e-2);
    EXPECT_NEAR(p[1], -0.5, 1e-2);
}

TEST(Adam, SizeMismatch) {
    std::vector<double> p{1.0}, g{1.0, 2.0}, lr{0.1};
    OptimizerState s;
    s.reset(1);
    EXPECT_THROW(adam_step(p, g, s, lr), DimensionError);
}
