// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Photometric fitting of an avatar to a dataset.
#pragma once

#include <handsplat/checkpoint.hpp>
#include <handsplat/config.hpp>
#include <handsplat/control.hpp>
#include <handsplat/dataset.hpp>

#include <filesystem>
#include <functional>

namespace handsplat {

struct FitOptions {
    /// Receives loss.csv, control.csv, periodic checkpoints and final.ckpt; empty
    /// writes nothing.
    std::filesystem::path out_dir;
    /// Start from this model instead of the default initialization.
    const AvatarModel *initial = nullptr;
    /// Called after every step with the step index and its loss.
    std::function<void(int, const LossReport &)> on_step;
};

struct FitResult {
    AvatarModel model;
    OptimizerState optimizer;
    std::vector<double> losses; // total loss per step
    std::vector<ControlReport> control_reports;
};

/// Frames used for fitting: every frame not listed in data.holdout_frames.
std::vector<int> training_frames(const Dataset &data, const RunConfig &cfg);

AvatarModel initial_model(const Dataset &data, const RunConfig &cfg);

/// Runs cfg.optim.iterations steps. Deterministic for a fixed configuration. A
/// non-finite loss or gradient writes last_good.ckpt (when out_dir is set) and
/// throws NumericError.
FitResult fit(const Dataset &data, const RunConfig &cfg, const FitOptions &options = {});

/// Carries Adam moments across a change of Gaussian population; Gaussian i of
/// the new layout inherits the moments of provenance[i].
OptimizerState remap_optimizer(const OptimizerState &state, const ParameterLayout &from,
                               const ParameterLayout &to, std::span<const int> provenance);

} // namespace handsplat
