// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// The avatar model, its flat parameter layout, the reconstruction loss and the
// reverse pass from image loss back to every learnable block. Also Adam and the
// central-difference checker.
#pragma once

#include <handsplat/image.hpp>
#include <handsplat/lighting.hpp>
#include <handsplat/render.hpp>
#include <handsplat/surfgauss.hpp>

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace handsplat {

struct LossReport {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0; // 1 - SSIM
    std::map<std::string, double> regularizers;
};

struct LossWeights {
    double lambda_dssim = 0.2;
    double pose_refinement = 1e-3; // L2 on the current frame's refinement
    double vertex_offset = 1e-2;   // L2 on all canonical vertex offsets
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM) on the RGB channels.
LossReport reconstruction_loss(const RenderedImage &rendered, const Image &target, double lambda);

/// Same, also returning d(total)/d(rendered rgb).
LossReport reconstruction_loss(const RenderedImage &rendered, const Image &target, double lambda,
                               std::vector<double> &gradRgb);

struct PoseRefinement {
    std::vector<Vec3> joints; // added to the axis-angle of each joint
    Vec3 root = Vec3::Zero(); // added to the root translation
};

struct AvatarModel {
    ArticulatedMesh mesh;
    std::vector<Vec3> vertex_offsets; // added to the rest vertices
    SurfaceGaussianSet gaussians;
    LightingNet lighting;
    std::vector<PoseRefinement> pose_refinements; // one per frame
    SurfaceSettings surface;

    std::vector<Vec3> canonical_vertices() const;
    DeformedMesh canonical_surface() const;
    /// Input pose plus the refinement of `frame` (none when frame is out of range).
    PoseFrame refined_pose(const PoseFrame &pose, int frame) const;
    void reset_refinements(int frameCount);
    void validate() const;
};

/// Fresh model on a mesh: default Gaussians, zero offsets and refinements, and a
/// lighting net whose output starts at `baseEnvironment`.
struct ModelOptions {
    SurfaceSettings surface;
    int sh_order = 2;
    std::vector<int> hidden = {64, 64};
    Activation activation = Activation::softplus;
    bool include_root_translation = false;
    double output_weight_scale = 0.01;
    Vec3 base_irradiance = Vec3::Constant(1.0);
};

AvatarModel create_model(const ArticulatedMesh &mesh, int frameCount, const ModelOptions &options, Rng &rng);

struct ParameterBlock {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Contiguous named blocks covering every learnable real of a model. Gaussian
/// fields are stored field-major (all bary logits, then all log scales, ...).
class ParameterLayout {
  public:
    ParameterLayout() = default;
    explicit ParameterLayout(const AvatarModel &model);

    std::size_t size() const { return mSize; }
    const std::vector<ParameterBlock> &blocks() const { return mBlocks; }
    const ParameterBlock &block(const std::string &name) const;
    /// Name of the block holding a flat index.
    const std::string &block_of(std::size_t index) const;

    std::vector<double> gather(const AvatarModel &model) const;
    void scatter(std::span<const double> values, AvatarModel &model) const;

  private:
    std::vector<ParameterBlock> mBlocks;
    std::size_t mSize = 0;
    std::size_t mGaussians = 0, mVertices = 0, mFrames = 0, mJoints = 0;
};

/// Per-block learning rates keyed by block name. A name ending in '*' matches
/// every block with that prefix; the longest match wins. Unmatched blocks get 0.
std::vector<double> expand_learning_rates(const ParameterLayout &layout,
                                          const std::map<std::string, double> &rates);

struct FrameRender {
    RenderedImage image;
    std::vector<ScreenSplat> splats;
    std::vector<int> splat_gaussian; // Gaussian index of each screen splat
    DualEnvironment environment;
};

struct RenderOptions {
    const DualEnvironment *environment_override = nullptr;
    bool reference = false; // use the brute-force compositor
};

/// Forward render of one frame. `frame` selects the pose refinement (-1: none).
FrameRender render_frame(const AvatarModel &model, const PoseFrame &pose, int frame, const Camera &cam,
                         const RenderSettings &settings, const RenderOptions &options = {});

struct FrameEvaluation {
    LossReport loss;
    RenderedImage image;
    std::vector<double> mean2d_grad_norm; // per Gaussian, 0 when culled
    std::vector<std::uint8_t> visible;    // per Gaussian
};

/// Loss of one frame against `target`; when `grad` is non-empty it receives
/// d(loss)/d(parameters) in `layout` order (accumulated, not overwritten).
FrameEvaluation evaluate_frame(const AvatarModel &model, const ParameterLayout &layout, const PoseFrame &pose,
                               int frame, const Camera &cam, const Image &target,
                               const RenderSettings &settings, const LossWeights &weights,
                               std::span<double> grad = {});

/// (f(x + h e_i) - f(x - h e_i)) / 2h; x is restored afterwards.
double finite_difference(const std::function<double(std::span<const double>)> &f, std::vector<double> &x,
                         std::size_t index, double h);

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    void reset(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        step = 0;
    }
};

/// One bias-corrected Adam update. A learning rate of 0 freezes a parameter
/// (its moments still update).
void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState &state,
               std::span<const double> learningRates, const AdamSettings &settings = {});

} // namespace handsplat
