// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: every tunable default in one TOML file. Unknown keys are
// rejected; `config_template()` renders all keys with their defaults and docs.
#pragma once

#include <handsplat/control.hpp>
#include <handsplat/diff.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace handsplat {

struct OptimSettings {
    int iterations = 2000;
    AdamSettings adam;
    double lr_bary = 0.01;
    double lr_scale = 0.005;
    double lr_rotation = 0.01;
    double lr_offset = 0.01;
    double lr_albedo = 0.05;
    double lr_opacity = 0.05;
    double lr_vertex_offsets = 1e-5;
    double lr_lighting = 1e-3;
    double lr_pose = 1e-4;
    /// Vertex offsets and pose refinements stay frozen for this many steps.
    int freeze_geometry_until = 500;
    int checkpoint_interval = 0; // 0: only the final checkpoint
    int log_interval = 1;

    /// Block-name -> learning rate map consumed by expand_learning_rates.
    std::map<std::string, double> block_rates(bool geometryFrozen) const;
};

struct ScheduleSettings {
    int control_start = 100;
    int control_stop = 1500;
};

struct DataSettings {
    std::vector<int> holdout_frames;
    Vec3 palm_axis = Vec3::UnitZ();
};

struct RunConfig {
    std::uint64_t seed = 0;
    ModelOptions model;
    RenderSettings render;
    LossWeights loss;
    OptimSettings optim;
    ControlConfig control;
    ScheduleSettings schedule;
    DataSettings data;

    void validate() const;
};

/// Parses TOML text over the defaults. Throws ConfigError on unknown keys,
/// wrong types or invalid values.
RunConfig parse_config(const std::string &text);
RunConfig load_config(const std::filesystem::path &path);

/// Fully commented TOML with every key at its default value.
std::string config_template();

/// TOML rendering of a configuration (same layout as the template, no comments).
std::string config_to_toml(const RunConfig &cfg);

Precision parse_precision(const std::string &name);

} // namespace handsplat
