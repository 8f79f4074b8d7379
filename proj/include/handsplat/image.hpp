// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Linear float images, image metrics and PNG I/O.
//
// PNG convention: 16-bit files hold linear values (v * 65535, rounded); 8-bit files
// hold sRGB-encoded values. Alpha is always stored linearly.
#pragma once

#include <handsplat/common.hpp>

#include <filesystem>
#include <vector>

namespace handsplat {

/// Interleaved linear image; data[(y * width + x) * channels + c].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

    double &at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// PSNR on [0,1] data, capped at kPsnrCap (returned for identical images).
inline constexpr double kPsnrCap = 99.0;
double psnr(const Image &a, const Image &b);

/// Mean SSIM over all pixels and channels: 11x11 Gaussian window (sigma 1.5) with
/// zero padding at the borders, C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image &a, const Image &b);

/// Mean SSIM and its gradient with respect to every value of `a`.
double ssim_with_gradient(const Image &a, const Image &b, std::vector<double> &gradA);

double srgb_encode(double linear);
double srgb_decode(double encoded);

enum class PngDepth { eight = 8, sixteen = 16 };

/// Reads a PNG into linear values. Gray, gray+alpha, RGB and RGBA inputs are
/// returned with 1, 2, 3 and 4 channels respectively.
Image read_png(const std::filesystem::path &path);

/// Writes a 1-4 channel image. Values are clamped to [0,1].
void write_png(const std::filesystem::path &path, const Image &image, PngDepth depth);

/// Portable float map (little-endian), unclamped RGB float32.
void write_pfm(const std::filesystem::path &path, const Image &rgb);
Image read_pfm(const std::filesystem::path &path);

} // namespace handsplat
