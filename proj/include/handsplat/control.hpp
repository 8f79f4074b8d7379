// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Adaptive density control: clone, split and prune driven by accumulated
// screen-space positional gradients, then re-anchoring every Gaussian to its
// nearest canonical triangle.
#pragma once

#include <handsplat/surfgauss.hpp>

#include <vector>

namespace handsplat {

struct ControlConfig {
    int control_interval = 100;
    double grad_threshold = 8e-5;
    /// Clone/split boundary on the larger canonical scale; 0 means 1.5x the
    /// median canonical edge length.
    double split_scale_threshold = 0.0;
    double prune_opacity = 0.01;
    /// Prune Gaussians whose larger scale exceeds this multiple of the median edge.
    double max_scale_factor = 5.0;
    int max_gaussians = 100000;
    int min_gaussians = 16;
    double split_factor = 1.6;

    void validate() const;
};

/// Per-Gaussian accumulated |dL/d mean2d| and observation count.
struct GradStats {
    std::vector<double> accum;
    std::vector<int> count;

    void reset(std::size_t n) {
        accum.assign(n, 0.0);
        count.assign(n, 0);
    }
    void add(std::size_t i, double gradNorm) {
        accum[i] += gradNorm;
        ++count[i];
    }
    double mean(std::size_t i) const { return count[i] > 0 ? accum[i] / count[i] : 0.0; }
};

struct ControlReport {
    int clones = 0;
    int splits = 0;
    int prunes = 0;
    int reassigned = 0;
    int clamp_warnings = 0;
    int floor_warnings = 0;
};

/// A rewritten set plus, for every output Gaussian, the index of the input
/// Gaussian it descends from.
struct ControlResult {
    SurfaceGaussianSet set;
    std::vector<int> provenance;
};

ControlResult densify(const SurfaceGaussianSet &set, const GradStats &stats, const DeformedMesh &canonical,
                      const ControlConfig &cfg, Rng &rng, ControlReport *report = nullptr);

ControlResult prune(const SurfaceGaussianSet &set, const DeformedMesh &canonical, const ControlConfig &cfg,
                    ControlReport *report = nullptr);

/// Re-anchors each Gaussian to the triangle nearest its canonical anchor. The
/// in-plane angle is re-expressed in the new face's frame; scales are kept.
ControlResult reassign(const SurfaceGaussianSet &set, const DeformedMesh &canonical, double zMax,
                       ControlReport *report = nullptr);

/// densify, prune, reassign; `stats` is reset to the new population.
ControlResult control_cycle(const SurfaceGaussianSet &set, GradStats &stats, const DeformedMesh &canonical,
                            const ControlConfig &cfg, double zMax, Rng &rng, ControlReport *report = nullptr);

} // namespace handsplat
