// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Shared numeric types, error hierarchy and small scalar helpers.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace handsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;

inline constexpr double kPi = 3.14159265358979323846;

/// Base class of every error raised by the library. `exit_code()` is the process
/// status the CLI reports for the error family.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string &what, int exitCode = 1)
        : std::runtime_error(what), mExitCode(exitCode) {}
    int exit_code() const noexcept { return mExitCode; }

  private:
    int mExitCode;
};

class DimensionError : public Error {
  public:
    explicit DimensionError(const std::string &what) : Error("dimension error: " + what, 2) {}
};

class DegenerateTriangleError : public Error {
  public:
    explicit DegenerateTriangleError(const std::string &what)
        : Error("degenerate triangle: " + what, 4) {}
};

class DegenerateDeformationError : public Error {
  public:
    explicit DegenerateDeformationError(const std::string &what)
        : Error("degenerate deformation: " + what, 4) {}
};

class DomainError : public Error {
  public:
    explicit DomainError(const std::string &what) : Error("domain error: " + what, 2) {}
};

class RenderError : public Error {
  public:
    explicit RenderError(const std::string &what) : Error("render error: " + what, 4) {}
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string &what) : Error("config error: " + what, 2) {}
};

/// Dataset validation failures. `code` names the specific defect.
class DatasetError : public Error {
  public:
    DatasetError(std::string code, const std::string &what)
        : Error("dataset error [" + code + "]: " + what, 3), mCode(std::move(code)) {}
    const std::string &code() const noexcept { return mCode; }

  private:
    std::string mCode;
};

class NumericError : public Error {
  public:
    explicit NumericError(const std::string &what) : Error("numeric failure: " + what, 4) {}
};

class IoError : public Error {
  public:
    explicit IoError(const std::string &what) : Error("I/O error: " + what, 5) {}
};

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Rigid motion x -> rotation * x + translation.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3 &p) const { return rotation * p + translation; }

    RigidTransform operator*(const RigidTransform &rhs) const {
        return {rotation * rhs.rotation, rotation * rhs.translation + translation};
    }

    RigidTransform inverse() const {
        const Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }
};

/// Deterministic RNG. The engine's output sequence is fixed by the standard; the
/// distributions are written out here because <random>'s are implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : mEngine(seed) {}

    std::uint64_t next() { return mEngine(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * double(n)) % n; }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    Vec3 unit_vector() {
        Vec3 v(normal(), normal(), normal());
        while (v.norm() < 1e-12)
            v = Vec3(normal(), normal(), normal());
        return v.normalized();
    }

  private:
    std::mt19937_64 mEngine;
};

} // namespace handsplat
