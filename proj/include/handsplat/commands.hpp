// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// File-level workflows behind the command-line tool: sequence rendering and
// relighting, compositing, evaluation and throughput measurement.
#pragma once

#include <handsplat/checkpoint.hpp>
#include <handsplat/dataset.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace handsplat {

/// SH override file: {"order": n, "palm": [[...], [...], [...]], "back": [...]},
/// one row of (n+1)^2 coefficients per RGB channel in (l, m) order.
DualEnvironment read_environment_json(const std::filesystem::path &path);
std::string environment_to_json(const DualEnvironment &env);

struct SequenceOptions {
    RenderSettings settings;
    /// Replaces the predicted environments when set.
    const DualEnvironment *environment = nullptr;
    /// Also write unclamped radiance as <tttt>.pfm.
    bool raw = false;
    /// Write the environment of every frame as <tttt>_sh.json.
    bool dump_environment = false;
};

/// Renders every (view, frame) to out/<view>/<tttt>.png as 16-bit linear RGBA.
/// Frame t uses the checkpoint's pose refinement t when it has one. Returns the
/// number of images written.
int render_sequence(const AvatarModel &model, std::span<const PoseFrame> poses, std::span<const CameraView> views,
                    const std::filesystem::path &out, const SequenceOptions &options);

/// For every <tttt>.png in `rendered` (RGBA): composites over background/<tttt>.png
/// using masks/<tttt>_object.png (all-zero mask when missing). Output is 8-bit sRGB.
int composite_directory(const std::filesystem::path &rendered, const std::filesystem::path &background,
                        const std::filesystem::path &masks, const std::filesystem::path &out);

struct EvalRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

/// Metrics of every PNG in `rendered` against the same-named file in `target`
/// (RGB channels only).
std::vector<EvalRow> evaluate_directory(const std::filesystem::path &rendered, const std::filesystem::path &target);
/// CSV with one row per image and a final "mean" row.
std::string eval_csv(std::span<const EvalRow> rows);

struct BenchReport {
    int frames = 0;
    std::size_t splats = 0; // screen splats of the last frame
    double seconds = 0.0;
    double fps = 0.0;
    double splats_per_second = 0.0;
};

BenchReport run_bench(const AvatarModel &model, const PoseFrame &pose, const Camera &cam,
                      const RenderSettings &settings, int frames);

/// Icosphere avatar with at least `gaussians` Gaussians, viewed by a square
/// camera of the given size that frames the sphere.
struct BenchScene {
    AvatarModel model;
    Camera camera;
};
BenchScene make_bench_scene(int gaussians, int size, std::uint64_t seed = 0);

} // namespace handsplat
