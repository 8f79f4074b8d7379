// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/lighting.hpp>

#include <array>

namespace handsplat {

namespace {

using Poly = std::array<double, kMaxShOrder + 1>; // coefficients of z^0..z^4

struct ShTables {
    // derivative[l][m] = d^m/dz^m P_l, the m-th derivative of the Legendre polynomial
    std::array<std::array<Poly, kMaxShOrder + 2>, kMaxShOrder + 1> derivative{};
    // norm[l][m] = sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) * (m > 0 ? sqrt(2) (-1)^m : 1)
    std::array<std::array<double, kMaxShOrder + 1>, kMaxShOrder + 1> norm{};
};

const ShTables &tables() {
    static const ShTables t = [] {
        ShTables out;
        std::array<Poly, kMaxShOrder + 1> legendre{};
        legendre[0][0] = 1.0;
        legendre[1][1] = 1.0;
        for (int n = 1; n < kMaxShOrder; ++n)
            for (int k = 0; k <= kMaxShOrder; ++k) {
                const double zterm = k > 0 ? legendre[n][k - 1] : 0.0;
                legendre[n + 1][k] = ((2 * n + 1) * zterm - n * legendre[n - 1][k]) / (n + 1);
            }
        auto factorial = [](int n) {
            double f = 1.0;
            for (int i = 2; i <= n; ++i)
                f *= i;
            return f;
        };
        for (int l = 0; l <= kMaxShOrder; ++l) {
            Poly p = legendre[l];
            for (int m = 0; m <= l + 1; ++m) {
                out.derivative[l][m] = p;
                Poly dp{};
                for (int k = 1; k <= kMaxShOrder; ++k)
                    dp[k - 1] = k * p[k];
                p = dp;
            }
            for (int m = 0; m <= l; ++m) {
                const double k =
                    std::sqrt((2 * l + 1) / (4.0 * kPi) * factorial(l - m) / factorial(l + m));
                out.norm[l][m] = m == 0 ? k : std::sqrt(2.0) * ((m % 2) ? -k : k);
            }
        }
        return out;
    }();
    return t;
}

double eval_poly(const Poly &p, double z) {
    double acc = 0.0;
    for (int k = kMaxShOrder; k >= 0; --k)
        acc = acc * z + p[k];
    return acc;
}

} // namespace

void sh_basis_eval(const Vec3 &d, int order, std::span<double> values, std::span<Vec3> gradient) {
    if (order < 0 || order > kMaxShOrder)
        throw DomainError("SH order must be in [0, 4]");
    const auto &t = tables();
    const double x = d.x(), y = d.y(), z = d.z();
    // c[m] + i s[m] = (x + i y)^m
    std::array<double, kMaxShOrder + 1> c{}, s{};
    c[0] = 1.0;
    s[0] = 0.0;
    for (int m = 1; m <= order; ++m) {
        c[m] = c[m - 1] * x - s[m - 1] * y;
        s[m] = c[m - 1] * y + s[m - 1] * x;
    }
    const bool wantGrad = !gradient.empty();
    for (int l = 0; l <= order; ++l) {
        for (int m = 0; m <= l; ++m) {
            const double pz = eval_poly(t.derivative[l][m], z);
            const double dpz = eval_poly(t.derivative[l][m + 1], z);
            const double k = t.norm[l][m];
            const int ip = l * l + l + m;
            const int in = l * l + l - m;
            values[ip] = k * c[m] * pz;
            if (m > 0)
                values[in] = k * s[m] * pz;
            if (!wantGrad)
                continue;
            const double cm1 = m > 0 ? c[m - 1] : 0.0, sm1 = m > 0 ? s[m - 1] : 0.0;
            gradient[ip] = k * Vec3(m * cm1 * pz, -m * sm1 * pz, c[m] * dpz);
            if (m > 0)
                gradient[in] = k * Vec3(m * sm1 * pz, m * cm1 * pz, s[m] * dpz);
        }
    }
}

std::vector<double> sh_basis(const Vec3 &direction, int order) {
    if (!(std::abs(direction.norm() - 1.0) <= 1e-6))
        throw DomainError("SH direction must be unit length");
    std::vector<double> out(static_cast<std::size_t>(sh_basis_count(order)));
    sh_basis_eval(direction, order, out);
    return out;
}

ShCoefficients ShCoefficients::zeros(int order) {
    if (order < 0 || order > kMaxShOrder)
        throw DomainError("SH order must be in [0, 4]");
    return {order, std::vector<double>(static_cast<std::size_t>(3 * sh_basis_count(order)), 0.0)};
}

void ShCoefficients::validate() const {
    if (order < 0 || order > kMaxShOrder)
        throw DomainError("SH order must be in [0, 4]");
    if (coeffs.size() != static_cast<std::size_t>(3 * basis_count()))
        throw DimensionError("SH coefficient count must be 3 * (order+1)^2");
    for (double c : coeffs)
        if (!std::isfinite(c))
            throw DomainError("non-finite SH coefficient");
}

Vec3 sh_irradiance(const ShCoefficients &l, const Vec3 &normal) {
    std::array<double, (kMaxShOrder + 1) * (kMaxShOrder + 1)> basis{};
    const int nb = l.basis_count();
    sh_basis_eval(normal, l.order, std::span<double>(basis.data(), static_cast<std::size_t>(nb)));
    Vec3 irr = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch)
        for (int k = 0; k < nb; ++k)
            irr[ch] += l.at(ch, k) * basis[k];
    return irr;
}

Vec3 shade(const Vec3 &albedo, const ShCoefficients &l, const Vec3 &normal) {
    return albedo.cwiseProduct(sh_irradiance(l, normal).cwiseMax(0.0));
}

Vec3 shade_splat(const WorldSplat &splat, const DualEnvironment &env, FaceSide side) {
    return shade(splat.albedo, env.side(side), splat.normal);
}

Activation parse_activation(const std::string &name) {
    if (name == "softplus")
        return Activation::softplus;
    if (name == "tanh")
        return Activation::tanh;
    if (name == "relu")
        return Activation::relu;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
    case Activation::softplus:
        return "softplus";
    case Activation::tanh:
        return "tanh";
    case Activation::relu:
        return "relu";
    }
    return "softplus";
}

namespace {

double activate(Activation a, double x) {
    switch (a) {
    case Activation::softplus:
        return x > 30.0 ? x : std::log1p(std::exp(x));
    case Activation::tanh:
        return std::tanh(x);
    case Activation::relu:
        return x > 0.0 ? x : 0.0;
    }
    return x;
}

double activate_grad(Activation a, double x) {
    switch (a) {
    case Activation::softplus:
        return sigmoid(x);
    case Activation::tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
    }
    case Activation::relu:
        return x > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

} // namespace

LightingNet LightingNet::create(int jointCount, int order, std::span<const int> hidden,
                                Activation activation, bool includeRootTranslation, Rng &rng,
                                const DualEnvironment &baseEnvironment, double outputWeightScale) {
    LightingNet net;
    net.mJointCount = jointCount;
    net.mOrder = order;
    net.mIncludeRoot = includeRootTranslation;
    net.mActivation = activation;
    baseEnvironment.palm.validate();
    baseEnvironment.back.validate();
    if (baseEnvironment.palm.order != order || baseEnvironment.back.order != order)
        throw DimensionError("base environment order differs from the network order");

    int in = net.input_size();
    std::vector<int> sizes(hidden.begin(), hidden.end());
    sizes.push_back(net.output_size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const int out = sizes[i];
        DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
        const bool last = i + 1 == sizes.size();
        const double bound = (last ? outputWeightScale : 1.0) * std::sqrt(6.0 / (in + out));
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c)
                layer.weight(r, c) = rng.uniform(-bound, bound);
        if (last) {
            const int half = out / 2;
            for (int k = 0; k < half; ++k) {
                layer.bias[k] = baseEnvironment.palm.coeffs[k];
                layer.bias[half + k] = baseEnvironment.back.coeffs[k];
            }
        }
        net.mLayers.push_back(std::move(layer));
        in = out;
    }
    return net;
}

LightingNet LightingNet::from_layers(int jointCount, int order, Activation activation,
                                     bool includeRootTranslation, std::vector<DenseLayer> layers) {
    LightingNet net;
    net.mJointCount = jointCount;
    net.mOrder = order;
    net.mActivation = activation;
    net.mIncludeRoot = includeRootTranslation;
    net.mLayers = std::move(layers);
    net.validate();
    return net;
}

void LightingNet::validate() const {
    if (mOrder < 0 || mOrder > kMaxShOrder)
        throw DomainError("lighting net SH order must be in [0, 4]");
    if (mLayers.empty())
        throw DimensionError("lighting net has no layers");
    int in = input_size();
    for (const auto &layer : mLayers) {
        if (layer.weight.cols() != in || layer.bias.size() != layer.weight.rows())
            throw DimensionError("lighting net layer dimensions do not chain");
        if (!layer.weight.allFinite() || !layer.bias.allFinite())
            throw DomainError("lighting net has non-finite weights");
        in = static_cast<int>(layer.weight.rows());
    }
    if (in != output_size())
        throw DimensionError("lighting net output size must be 2 * 3 * (order+1)^2");
}

int LightingNet::parameter_count() const {
    int n = 0;
    for (const auto &layer : mLayers)
        n += static_cast<int>(layer.weight.size() + layer.bias.size());
    return n;
}

void LightingNet::gather(std::span<double> out) const {
    std::size_t k = 0;
    for (const auto &layer : mLayers) {
        for (int r = 0; r < layer.weight.rows(); ++r)
            for (int c = 0; c < layer.weight.cols(); ++c)
                out[k++] = layer.weight(r, c);
        for (int r = 0; r < layer.bias.size(); ++r)
            out[k++] = layer.bias[r];
    }
}

void LightingNet::scatter(std::span<const double> in) {
    std::size_t k = 0;
    for (auto &layer : mLayers) {
        for (int r = 0; r < layer.weight.rows(); ++r)
            for (int c = 0; c < layer.weight.cols(); ++c)
                layer.weight(r, c) = in[k++];
        for (int r = 0; r < layer.bias.size(); ++r)
            layer.bias[r] = in[k++];
    }
}

Eigen::VectorXd LightingNet::features(const PoseFrame &pose) const {
    if (static_cast<int>(pose.joint_rotations.size()) != mJointCount)
        throw DimensionError("pose joint count differs from lighting net input");
    Eigen::VectorXd x(input_size());
    for (int j = 0; j < mJointCount; ++j)
        x.segment<3>(3 * j) = pose.joint_rotations[j];
    if (mIncludeRoot)
        x.tail<3>() = pose.root_translation;
    return x;
}

Eigen::VectorXd LightingNet::forward(const Eigen::VectorXd &x, Trace *trace) const {
    if (x.size() != input_size())
        throw DimensionError("lighting net input has wrong size");
    Eigen::VectorXd h = x;
    if (trace) {
        trace->inputs.clear();
        trace->preActivity.clear();
    }
    for (std::size_t i = 0; i < mLayers.size(); ++i) {
        if (trace)
            trace->inputs.push_back(h);
        Eigen::VectorXd z = mLayers[i].weight * h + mLayers[i].bias;
        if (i + 1 == mLayers.size())
            return z;
        if (trace)
            trace->preActivity.push_back(z);
        h = z.unaryExpr([this](double v) { return activate(mActivation, v); });
    }
    return h;
}

Eigen::VectorXd LightingNet::backward(const Trace &trace, const Eigen::VectorXd &outputGrad,
                                      std::span<double> paramGrad) const {
    // Parameter offsets in gather layout.
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto &layer : mLayers) {
        offsets.push_back(off);
        off += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    }
    Eigen::VectorXd g = outputGrad;
    for (int i = static_cast<int>(mLayers.size()) - 1; i >= 0; --i) {
        const auto &layer = mLayers[i];
        const Eigen::VectorXd &in = trace.inputs[i];
        std::size_t k = offsets[i];
        for (int r = 0; r < layer.weight.rows(); ++r)
            for (int c = 0; c < layer.weight.cols(); ++c)
                paramGrad[k++] += g[r] * in[c];
        for (int r = 0; r < layer.bias.size(); ++r)
            paramGrad[k++] += g[r];
        Eigen::VectorXd gin = layer.weight.transpose() * g;
        if (i > 0) {
            const Eigen::VectorXd &z = trace.preActivity[i - 1];
            for (int r = 0; r < gin.size(); ++r)
                gin[r] *= activate_grad(mActivation, z[r]);
        }
        g = std::move(gin);
    }
    return g;
}

DualEnvironment LightingNet::split(const Eigen::VectorXd &output) const {
    DualEnvironment env{ShCoefficients::zeros(mOrder), ShCoefficients::zeros(mOrder)};
    const int half = 3 * sh_basis_count(mOrder);
    for (int k = 0; k < half; ++k) {
        env.palm.coeffs[k] = output[k];
        env.back.coeffs[k] = output[half + k];
    }
    return env;
}

DualEnvironment predict_environments(const LightingNet &net, const PoseFrame &pose) {
    return net.split(net.forward(net.features(pose)));
}

ShCoefficients constant_environment(int order, const Vec3 &irradiance) {
    ShCoefficients l = ShCoefficients::zeros(order);
    const double y00 = 0.5 / std::sqrt(kPi);
    for (int ch = 0; ch < 3; ++ch)
        l.at(ch, 0) = irradiance[ch] / y00;
    return l;
}

} // namespace handsplat
