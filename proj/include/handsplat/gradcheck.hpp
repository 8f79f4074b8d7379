// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Randomized small scenes and the analytic-vs-central-difference comparison
// over every parameter block.
#pragma once

#include <handsplat/diff.hpp>

#include <map>
#include <string>

namespace handsplat {

struct GradcheckScene {
    AvatarModel model;
    PoseFrame pose;
    int frame = 0;
    Camera camera;
    Image target;
    RenderSettings render;
    LossWeights weights;
};

struct GradcheckSceneOptions {
    int gaussians = 4;
    int image_size = 16;
    std::vector<int> hidden = {8, 8};
    int sh_order = 2;
};

/// Two-joint strip of four triangles seen by one camera, random Gaussians,
/// lighting net, pose, refinements, vertex offsets and target. Opacities stay
/// below the alpha clamp and irradiance stays positive so the loss is smooth.
GradcheckScene make_gradcheck_scene(Rng &rng, const GradcheckSceneOptions &options = {});

struct BlockCheck {
    std::size_t checked = 0;
    std::size_t failures = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    double max_gradient = 0.0; // largest |analytic| entry
};

struct GradcheckReport {
    std::map<std::string, BlockCheck> blocks;
    std::size_t failures = 0;
    bool passed() const { return failures == 0; }
};

struct GradcheckTolerance {
    double step = 1e-6;
    double relative = 1e-4;
    double absolute = 1e-7;
};

/// Compares every analytic gradient entry with a central difference. An entry
/// passes when |a - n| <= max(absolute, relative * max(|a|, |n|)).
GradcheckReport gradcheck(const GradcheckScene &scene, const GradcheckTolerance &tol = {});

} // namespace handsplat
