// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//   8 bytes   magic "HSPLATCK"
//   u32 LE    format version
//   u64 LE    manifest length in bytes
//   manifest  JSON (sorted keys) describing scalars and every blob
//   blobs     little-endian f64 / i64 arrays at the offsets the manifest lists
//
// A checkpoint holds everything needed to render: the rig and canonical mesh,
// vertex offsets, Gaussians, lighting net and per-frame pose refinements.
#pragma once

#include <handsplat/diff.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace handsplat {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    AvatarModel model;
    std::optional<OptimizerState> optimizer;
    std::string config_toml; // echo of the run configuration
    std::uint64_t seed = 0;
    std::int64_t step = 0;
};

std::string serialize_checkpoint(const Checkpoint &ckpt);
Checkpoint deserialize_checkpoint(const std::string &bytes);

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace handsplat
