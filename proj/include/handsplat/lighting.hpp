// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Real spherical-harmonics diffuse lighting with separate palm and back
// environments predicted from pose by a small MLP.
//
// Basis order: index k = l*l + l + m for band l and m in [-l, l]. Band 1 is
// (-c y, c z, -c x) with c = sqrt(3 / 4pi) (Condon-Shortley phase included).
// Coefficients are stored channel-major: coeffs[ch * (n+1)^2 + k].
#pragma once

#include <handsplat/mesh.hpp>
#include <handsplat/surfgauss.hpp>

#include <span>
#include <string>
#include <vector>

namespace handsplat {

inline constexpr int kMaxShOrder = 4;

inline int sh_basis_count(int order) { return (order + 1) * (order + 1); }

/// Evaluates all (order+1)^2 basis functions at a unit direction. Throws
/// DomainError for a non-unit direction or an order outside [0, 4].
std::vector<double> sh_basis(const Vec3 &direction, int order);

/// Same as sh_basis without the unit-length check; also writes the gradient of
/// each basis polynomial w.r.t. the direction (row k of `gradient`, may be empty).
void sh_basis_eval(const Vec3 &direction, int order, std::span<double> values,
                   std::span<Vec3> gradient = {});

struct ShCoefficients {
    int order = 2;
    std::vector<double> coeffs; // 3 * (order+1)^2, channel-major

    static ShCoefficients zeros(int order);
    int basis_count() const { return sh_basis_count(order); }
    double &at(int channel, int k) { return coeffs[static_cast<std::size_t>(channel * basis_count() + k)]; }
    double at(int channel, int k) const {
        return coeffs[static_cast<std::size_t>(channel * basis_count() + k)];
    }
    void validate() const;
};

struct DualEnvironment {
    ShCoefficients palm;
    ShCoefficients back;

    const ShCoefficients &side(FaceSide s) const { return s == FaceSide::palm ? palm : back; }
};

/// Per-channel sum_k coeffs[ch][k] * Y_k(normal), before clamping.
Vec3 sh_irradiance(const ShCoefficients &l, const Vec3 &normal);

/// albedo * max(0, irradiance), per channel.
Vec3 shade(const Vec3 &albedo, const ShCoefficients &l, const Vec3 &normal);

Vec3 shade_splat(const WorldSplat &splat, const DualEnvironment &env, FaceSide side);

enum class Activation { softplus, tanh, relu };

Activation parse_activation(const std::string &name);
std::string to_string(Activation a);

struct DenseLayer {
    Eigen::MatrixXd weight; // out x in
    Eigen::VectorXd bias;
};

/// Pose -> (palm, back) SH coefficients. Output layout: palm block then back
/// block, each 3 * (order+1)^2 channel-major coefficients.
class LightingNet {
  public:
    struct Trace {
        std::vector<Eigen::VectorXd> inputs;      // input of each layer
        std::vector<Eigen::VectorXd> preActivity; // pre-activation of each hidden layer
    };

    LightingNet() = default;

    /// Hidden layers get scaled-uniform random weights; the output layer gets
    /// weights scaled by `outputWeightScale` and a bias equal to `baseEnvironment`.
    static LightingNet create(int jointCount, int order, std::span<const int> hidden,
                              Activation activation, bool includeRootTranslation, Rng &rng,
                              const DualEnvironment &baseEnvironment, double outputWeightScale = 0.01);

    int order() const { return mOrder; }
    int joint_count() const { return mJointCount; }
    bool include_root_translation() const { return mIncludeRoot; }
    Activation activation() const { return mActivation; }
    int input_size() const { return 3 * mJointCount + (mIncludeRoot ? 3 : 0); }
    int output_size() const { return 2 * 3 * sh_basis_count(mOrder); }

    std::vector<DenseLayer> &layers() { return mLayers; }
    const std::vector<DenseLayer> &layers() const { return mLayers; }

    /// Total number of weights and biases.
    int parameter_count() const;
    /// Layer-major [weight (row-major), bias] flattening.
    void gather(std::span<double> out) const;
    void scatter(std::span<const double> in);

    Eigen::VectorXd features(const PoseFrame &pose) const;
    Eigen::VectorXd forward(const Eigen::VectorXd &x, Trace *trace = nullptr) const;

    /// Accumulates d(loss)/d(parameters) into paramGrad (gather layout) and
    /// returns d(loss)/d(input).
    Eigen::VectorXd backward(const Trace &trace, const Eigen::VectorXd &outputGrad,
                             std::span<double> paramGrad) const;

    DualEnvironment split(const Eigen::VectorXd &output) const;

    /// Construction from explicit layers (deserialization).
    static LightingNet from_layers(int jointCount, int order, Activation activation,
                                   bool includeRootTranslation, std::vector<DenseLayer> layers);

    void validate() const;

  private:
    int mJointCount = 0;
    int mOrder = 2;
    bool mIncludeRoot = false;
    Activation mActivation = Activation::softplus;
    std::vector<DenseLayer> mLayers;
};

DualEnvironment predict_environments(const LightingNet &net, const PoseFrame &pose);

/// Environment whose only non-zero coefficient is the DC term, chosen so the
/// irradiance equals `irradiance` everywhere.
ShCoefficients constant_environment(int order, const Vec3 &irradiance);

} // namespace handsplat
