// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <handsplat/lighting.hpp>

using namespace hs_test;

namespace {

// Hand-written real SH up to order 2 in (l, m) order, Condon-Shortley phase.
std::vector<double> oracle_sh2(const Vec3 &d) {
    const double x = d.x(), y = d.y(), z = d.z();
    const double c0 = 0.28209479177387814, c1 = 0.4886025119029199, c2 = 1.0925484305920792,
                 c3 = 0.31539156525252005, c4 = 0.5462742152960396;
    return {c0, -c1 * y, c1 * z, -c1 * x, c2 * x * y, -c2 * y * z, c3 * (3 * z * z - 1), -c2 * x * z,
            c4 * (x * x - y * y)};
}

ShCoefficients random_env(Rng &rng, int order, double scale = 1.0) {
    ShCoefficients l = ShCoefficients::zeros(order);
    for (double &c : l.coeffs)
        c = scale * rng.uniform(-1, 1);
    return l;
}

} // namespace

TEST(ShBasis, Examples) {
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
        const auto b = sh_basis(rng.unit_vector(), 0);
        ASSERT_EQ(b.size(), 1u);
        EXPECT_NEAR(b[0], 0.28209479, 1e-8);
    }
    const auto b = sh_basis(Vec3::UnitZ(), 1);
    ASSERT_EQ(b.size(), 4u);
    EXPECT_NEAR(b[1], 0.0, 1e-15);
    EXPECT_NEAR(b[2], 0.48860251, 1e-8);
    EXPECT_NEAR(b[3], 0.0, 1e-15);
    EXPECT_THROW(sh_basis(Vec3(1, 1, 0), 1), DomainError);
    EXPECT_THROW(sh_basis(Vec3::UnitX(), 5), DomainError);
}

TEST(ShBasis, MatchesHandWrittenPolynomials) {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 d = rng.unit_vector();
        const auto b = sh_basis(d, 2);
        const auto o = oracle_sh2(d);
        for (int k = 0; k < 9; ++k)
            EXPECT_NEAR(b[k], o[k], 1e-14);
    }
}

TEST(ShBasis, CountIsOrderPlusOneSquared) {
    for (int n = 0; n <= 4; ++n)
        EXPECT_EQ(sh_basis(Vec3::UnitX(), n).size(), static_cast<std::size_t>((n + 1) * (n + 1)));
}

TEST(ShBasis, MonteCarloOrthonormality) {
    Rng rng(3);
    const int order = 4, nb = 25, samples = 100000;
    std::vector<double> gram(nb * nb, 0.0);
    for (int s = 0; s < samples; ++s) {
        const auto b = sh_basis(rng.unit_vector(), order);
        for (int i = 0; i < nb; ++i)
            for (int j = 0; j < nb; ++j)
                gram[i * nb + j] += b[i] * b[j];
    }
    for (int i = 0; i < nb; ++i)
        for (int j = 0; j < nb; ++j)
            EXPECT_NEAR(gram[i * nb + j] * 4 * kPi / samples, i == j ? 1.0 : 0.0, 2e-2) << i << "," << j;
}

TEST(ShBasis, AntipodalParity) {
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const Vec3 d = rng.unit_vector();
        const auto a = sh_basis(d, 4), b = sh_basis(-d, 4);
        for (int l = 0; l <= 4; ++l)
            for (int m = -l; m <= l; ++m) {
                const int k = l * l + l + m;
                EXPECT_NEAR(b[k], (l % 2 ? -1.0 : 1.0) * a[k], 1e-12);
            }
    }
}

TEST(ShBasis, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    std::vector<double> v(25), vp(25), vm(25);
    std::vector<Vec3> g(25);
    for (int i = 0; i < 50; ++i) {
        const Vec3 d = rng.unit_vector();
        sh_basis_eval(d, 4, v, g);
        for (int a = 0; a < 3; ++a) {
            Vec3 p = d, m = d;
            p[a] += 1e-6;
            m[a] -= 1e-6;
            sh_basis_eval(p, 4, vp);
            sh_basis_eval(m, 4, vm);
            for (int k = 0; k < 25; ++k)
                EXPECT_NEAR((vp[k] - vm[k]) / 2e-6, g[k][a], 1e-7);
        }
    }
}

TEST(Shade, DcOnlyIsNormalIndependent) {
    Rng rng(6);
    const ShCoefficients l = constant_environment(2, Vec3(0.5, 0.8, 1.2));
    const Vec3 albedo(0.2, 0.4, 0.9);
    for (int i = 0; i < 50; ++i) {
        const Vec3 c = shade(albedo, l, rng.unit_vector());
        EXPECT_NEAR((c - albedo.cwiseProduct(Vec3(0.5, 0.8, 1.2))).norm(), 0.0, 1e-14);
    }
    ShCoefficients dc = ShCoefficients::zeros(0);
    dc.coeffs = {1.0, 2.0, 3.0};
    EXPECT_NEAR((shade(albedo, dc, Vec3::UnitY()) - albedo.cwiseProduct(Vec3(1, 2, 3)) * 0.28209479177387814).norm(),
                0.0, 1e-15);
}

TEST(Shade, BlackAlbedo) {
    Rng rng(7);
    const ShCoefficients l = random_env(rng, 2, 3.0);
    EXPECT_EQ(shade(Vec3::Zero(), l, rng.unit_vector()), Vec3::Zero());
}

TEST(Shade, MatchesClampedPolynomialOracle) {
    Rng rng(8);
    const ShCoefficients l = random_env(rng, 1);
    const Vec3 albedo(0.3, 0.6, 0.9);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 n = rng.unit_vector();
        const auto o = oracle_sh2(n);
        Vec3 expected;
        for (int c = 0; c < 3; ++c) {
            double irr = 0.0;
            for (int k = 0; k < 4; ++k)
                irr += l.at(c, k) * o[k];
            expected[c] = albedo[c] * std::max(0.0, irr);
        }
        EXPECT_NEAR((shade(albedo, l, n) - expected).norm(), 0.0, 1e-14);
    }
}

TEST(Shade, LinearInCoefficientsAndAlbedo) {
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        ShCoefficients l1 = constant_environment(2, Vec3::Constant(2.0)), l2 = constant_environment(2, Vec3::Constant(1.5));
        const ShCoefficients r1 = random_env(rng, 2, 0.1), r2 = random_env(rng, 2, 0.1);
        for (std::size_t k = 0; k < l1.coeffs.size(); ++k) {
            l1.coeffs[k] += r1.coeffs[k];
            l2.coeffs[k] += r2.coeffs[k];
        }
        const double a = rng.uniform(0.1, 2), b = rng.uniform(0.1, 2);
        ShCoefficients mix = ShCoefficients::zeros(2);
        for (std::size_t k = 0; k < mix.coeffs.size(); ++k)
            mix.coeffs[k] = a * l1.coeffs[k] + b * l2.coeffs[k];
        const Vec3 albedo(rng.uniform(), rng.uniform(), rng.uniform());
        const Vec3 n = rng.unit_vector();
        EXPECT_NEAR((shade(albedo, mix, n) - a * shade(albedo, l1, n) - b * shade(albedo, l2, n)).norm(), 0.0, 1e-12);
        const double k = rng.uniform(0, 3);
        EXPECT_NEAR((shade(k * albedo, l1, n) - k * shade(albedo, l1, n)).norm(), 0.0, 1e-12);
    }
}

TEST(ShadeSplat, SelectsEnvironmentBySide) {
    Rng rng(10);
    const ShCoefficients same = random_env(rng, 2);
    WorldSplat s;
    s.albedo = Vec3(0.4, 0.5, 0.6);
    s.normal = rng.unit_vector();
    const DualEnvironment eq{same, same};
    EXPECT_EQ(shade_splat(s, eq, FaceSide::palm), shade_splat(s, eq, FaceSide::back));

    const DualEnvironment twice{constant_environment(2, Vec3::Constant(1.0)), constant_environment(2, Vec3::Constant(0.5))};
    EXPECT_NEAR((shade_splat(s, twice, FaceSide::palm) - 2.0 * shade_splat(s, twice, FaceSide::back)).norm(), 0.0, 1e-15);

    for (int i = 0; i < 100; ++i) {
        const DualEnvironment env{random_env(rng, 2), random_env(rng, 2)};
        s.normal = rng.unit_vector();
        s.albedo = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        EXPECT_EQ(shade_splat(s, env, FaceSide::palm), shade(s.albedo, env.palm, s.normal));
        EXPECT_EQ(shade_splat(s, env, FaceSide::back), shade(s.albedo, env.back, s.normal));
    }
}

namespace {

LightingNet random_net(Rng &rng, int joints, bool includeRoot, double outScale = 1.0) {
    const std::vector<int> hidden{16, 16};
    const DualEnvironment base{random_env(rng, 2), random_env(rng, 2)};
    return LightingNet::create(joints, 2, hidden, Activation::softplus, includeRoot, rng, base, outScale);
}

PoseFrame random_pose(Rng &rng, int joints) {
    PoseFrame p = PoseFrame::zero(joints);
    for (auto &w : p.joint_rotations)
        w = rng.unit_vector() * rng.uniform(0, 1.5);
    p.root_translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    return p;
}

} // namespace

TEST(LightingNet, ZeroWeightsReturnBias) {
    Rng rng(11);
    LightingNet net = random_net(rng, 3, false);
    for (auto &layer : net.layers())
        layer.weight.setZero();
    const Eigen::VectorXd bias = net.layers().back().bias;
    for (int i = 0; i < 5; ++i) {
        const DualEnvironment env = predict_environments(net, random_pose(rng, 3));
        const int half = static_cast<int>(env.palm.coeffs.size());
        for (int k = 0; k < half; ++k) {
            EXPECT_EQ(env.palm.coeffs[k], bias[k]);
            EXPECT_EQ(env.back.coeffs[k], bias[half + k]);
        }
    }
}

TEST(LightingNet, DeterministicAndDimensionChecked) {
    Rng rng(12);
    const LightingNet net = random_net(rng, 4, false);
    const PoseFrame p = random_pose(rng, 4);
    EXPECT_EQ(predict_environments(net, p).palm.coeffs, predict_environments(net, p).palm.coeffs);
    EXPECT_THROW(predict_environments(net, PoseFrame::zero(3)), DimensionError);
    EXPECT_EQ(net.output_size(), 2 * 3 * 9);
    EXPECT_EQ(net.input_size(), 12);
}

TEST(LightingNet, RootTranslationSwitch) {
    Rng rng(13);
    const LightingNet off = random_net(rng, 2, false);
    PoseFrame p = random_pose(rng, 2);
    const auto a = predict_environments(off, p).palm.coeffs;
    p.root_translation += Vec3(0.5, 0.5, 0.5);
    EXPECT_EQ(predict_environments(off, p).palm.coeffs, a);

    const LightingNet on = random_net(rng, 2, true);
    EXPECT_EQ(on.input_size(), 9);
    const auto b = predict_environments(on, p).palm.coeffs;
    p.root_translation += Vec3(0.5, 0.5, 0.5);
    EXPECT_NE(predict_environments(on, p).palm.coeffs, b);
}

TEST(LightingNet, PoseJacobianMatchesCentralDifferences) {
    Rng rng(14);
    for (bool root : {false, true}) {
        const LightingNet net = random_net(rng, 3, root);
        const PoseFrame pose = random_pose(rng, 3);
        const Eigen::VectorXd x = net.features(pose);
        LightingNet::Trace trace;
        net.forward(x, &trace);
        std::vector<double> scratch(static_cast<std::size_t>(net.parameter_count()));
        for (int o = 0; o < net.output_size(); ++o) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(net.output_size());
            e[o] = 1.0;
            const Eigen::VectorXd analytic = net.backward(trace, e, scratch);
            for (int i = 0; i < x.size(); ++i) {
                Eigen::VectorXd xp = x, xm = x;
                xp[i] += 1e-6;
                xm[i] -= 1e-6;
                const double fd = (net.forward(xp)[o] - net.forward(xm)[o]) / 2e-6;
                EXPECT_LE(std::abs(fd - analytic[i]), std::max(1e-7, 1e-4 * std::abs(fd)));
            }
        }
    }
}

TEST(LightingNet, ParameterGradientMatchesCentralDifferences) {
    Rng rng(15);
    LightingNet net = random_net(rng, 2, false);
    const Eigen::VectorXd x = net.features(random_pose(rng, 2));
    Eigen::VectorXd w(net.output_size());
    for (int i = 0; i < w.size(); ++i)
        w[i] = rng.uniform(-1, 1);
    LightingNet::Trace trace;
    net.forward(x, &trace);
    std::vector<double> grad(static_cast<std::size_t>(net.parameter_count()), 0.0);
    net.backward(trace, w, grad);
    std::vector<double> theta(grad.size());
    net.gather(theta);
    for (std::size_t k = 0; k < theta.size(); k += 7) {
        auto eval = [&](double v) {
            std::vector<double> t = theta;
            t[k] = v;
            LightingNet n2 = net;
            n2.scatter(t);
            return w.dot(n2.forward(x));
        };
        const double fd = (eval(theta[k] + 1e-6) - eval(theta[k] - 1e-6)) / 2e-6;
        EXPECT_LE(std::abs(fd - grad[k]), std::max(1e-7, 1e-4 * std::abs(fd)));
    }
}

TEST(LightingNet, ActivationNames) {
    for (Activation a : {Activation::softplus, Activation::tanh, Activation::relu})
        EXPECT_EQ(parse_activation(to_string(a)), a);
    EXPECT_THROW(parse_activation("gelu"), ConfigError);
}
