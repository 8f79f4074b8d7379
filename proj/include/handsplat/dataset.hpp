// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// On-disk dataset layout:
//   mesh.obj                   vertices and triangles
//   rig.json                   joint_parents, joint_rest_transforms (row-major 3x4),
//                              skin_weights ([vertex, joint, weight] triplets),
//                              optional face_side_labels ("palm"/"back"), palm_axis
//   poses.json                 {"frames": [{"joint_rotations": [[x,y,z]...], "root_translation": [x,y,z]}]}
//   cameras.json               {"views": [{"name", "fx", "fy", "cx", "cy", "width", "height",
//                              "world_to_camera": [12], optional "per_frame_world_to_camera": [[12]...]}]}
//   frames/<view>/<tttt>.png   target frames (linear 16-bit or sRGB 8-bit, RGB or RGBA)
//   masks/<tttt>_object.png    optional binary object mask
//   masks/<tttt>_hand.png      optional binary hand mask
#pragma once

#include <handsplat/image.hpp>
#include <handsplat/mesh.hpp>
#include <handsplat/render.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace handsplat {

struct Rig {
    std::vector<int> joint_parents;
    std::vector<RigidTransform> joint_rest_transforms;
    std::vector<std::vector<JointWeight>> skin_weights;
    std::vector<FaceSide> face_side_labels;
    std::optional<Vec3> palm_axis;
};

struct CameraView {
    std::string name;
    Camera camera;
    std::vector<RigidTransform> per_frame_world_to_camera; // empty: static camera
};

struct Dataset {
    std::filesystem::path root;
    ArticulatedMesh mesh;
    std::optional<Vec3> palm_axis;
    std::vector<PoseFrame> poses;
    std::vector<CameraView> views;
    std::vector<std::vector<Image>> frames; // [view][frame]
    std::vector<std::optional<Image>> object_masks;
    std::vector<std::optional<Image>> hand_masks;

    int frame_count() const { return static_cast<int>(poses.size()); }
    int view_count() const { return static_cast<int>(views.size()); }
    Camera camera(int view, int frame) const;
};

/// Triangles only; "f a/b/c ..." forms keep the position index.
void read_obj(const std::filesystem::path &path, std::vector<Vec3> &vertices,
              std::vector<std::array<int, 3>> &faces);
void write_obj(const std::filesystem::path &path, std::span<const Vec3> vertices,
               std::span<const std::array<int, 3>> faces);

Rig read_rig(const std::filesystem::path &path);
void write_rig(const std::filesystem::path &path, const ArticulatedMesh &mesh, const std::optional<Vec3> &palmAxis);

std::vector<PoseFrame> read_poses(const std::filesystem::path &path);
void write_poses(const std::filesystem::path &path, std::span<const PoseFrame> poses);

std::vector<CameraView> read_cameras(const std::filesystem::path &path);
void write_cameras(const std::filesystem::path &path, std::span<const CameraView> views);

/// Loads mesh + rig into an ArticulatedMesh (face sides labelled from the palm
/// axis when the rig has no labels).
ArticulatedMesh load_articulated_mesh(const std::filesystem::path &objPath, const std::filesystem::path &rigPath,
                                      const Vec3 &defaultPalmAxis, std::optional<Vec3> *palmAxisOut = nullptr);

std::string frame_file_name(int frame);

/// Loads and validates a dataset. Every defect raises DatasetError with one of
/// the codes: missing_file, parse, bad_face_index, mesh, rig, skin_weights, pose,
/// joint_count, camera, frame_count, image_size, mask_not_binary.
Dataset load_dataset(const std::filesystem::path &root, const Vec3 &defaultPalmAxis = Vec3::UnitZ());

} // namespace handsplat
