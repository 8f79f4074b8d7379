// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Procedural datasets with a known ground-truth avatar.
#pragma once

#include <handsplat/checkpoint.hpp>
#include <handsplat/dataset.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace handsplat {

enum class SyntheticKind { quad, icosphere, two_bone_cylinder };

SyntheticKind parse_synthetic_kind(const std::string &name);
std::string to_string(SyntheticKind kind);

struct SyntheticScene {
    AvatarModel ground_truth;
    std::vector<PoseFrame> poses;
    std::vector<CameraView> views;
    /// Frames the synthetic fit holds out for evaluation.
    std::vector<int> holdout_frames;
};

/// Builds the scene in memory; identical for identical (kind, seed).
SyntheticScene build_synthetic(SyntheticKind kind, std::uint64_t seed = 0);

/// Icosahedron subdivided `levels` times and projected onto a sphere.
void icosphere(int levels, double radius, std::vector<Vec3> &vertices, std::vector<std::array<int, 3>> &faces);

/// Look-at extrinsics in the x-right, y-down, z-forward camera convention.
RigidTransform look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up);

/// Writes the dataset layout (frames rendered with the reference compositor as
/// 16-bit RGBA, hand and object masks) plus ground_truth.ckpt under `out`.
SyntheticScene make_synthetic(SyntheticKind kind, const std::filesystem::path &out, std::uint64_t seed = 0);

} // namespace handsplat
