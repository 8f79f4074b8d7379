// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/image.hpp>

#include <png.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace handsplat {

double psnr(const Image &a, const Image &b) {
    if (!a.same_shape(b))
        throw DimensionError("psnr inputs differ in shape");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.data.size());
    if (mse <= 0.0)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kSsimRadius + 1> ssim_kernel() {
    std::array<double, 2 * kSsimRadius + 1> k{};
    double sum = 0.0;
    for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
        k[i + kSsimRadius] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i + kSsimRadius];
    }
    for (double &v : k)
        v /= sum;
    return k;
}

// Separable "same" Gaussian filter with zero padding on a single-channel plane.
std::vector<double> blur(const std::vector<double> &in, int w, int h) {
    static const auto k = ssim_kernel();
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -kSsimRadius; d <= kSsimRadius; ++d) {
                const int xx = x + d;
                if (xx >= 0 && xx < w)
                    acc += k[d + kSsimRadius] * in[static_cast<std::size_t>(y) * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -kSsimRadius; d <= kSsimRadius; ++d) {
                const int yy = y + d;
                if (yy >= 0 && yy < h)
                    acc += k[d + kSsimRadius] * tmp[static_cast<std::size_t>(yy) * w + x];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return out;
}

double ssim_impl(const Image &a, const Image &b, std::vector<double> *gradA) {
    if (!a.same_shape(b))
        throw DimensionError("ssim inputs differ in shape");
    const int w = a.width, h = a.height, nc = a.channels;
    const std::size_t np = a.pixel_count();
    const double count = static_cast<double>(np) * nc;
    if (gradA)
        gradA->assign(a.data.size(), 0.0);
    double total = 0.0;
    std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
    for (int c = 0; c < nc; ++c) {
        for (std::size_t i = 0; i < np; ++i) {
            x[i] = a.data[i * nc + c];
            y[i] = b.data[i * nc + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = blur(x, w, h), my = blur(y, w, h);
        const auto exx = blur(xx, w, h), eyy = blur(yy, w, h), exy = blur(xy, w, h);
        std::vector<double> ca, cb, cc;
        if (gradA) {
            ca.resize(np);
            cb.resize(np);
            cc.resize(np);
        }
        for (std::size_t i = 0; i < np; ++i) {
            const double sxx = exx[i] - mx[i] * mx[i];
            const double syy = eyy[i] - my[i] * my[i];
            const double sxy = exy[i] - mx[i] * my[i];
            const double den1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
            const double den2 = sxx + syy + kC2;
            const double lum = (2.0 * mx[i] * my[i] + kC1) / den1;
            const double cs = (2.0 * sxy + kC2) / den2;
            total += lum * cs;
            if (!gradA)
                continue;
            const double dMu = cs * (2.0 * my[i] - 2.0 * mx[i] * lum) / den1;
            const double dVar = -lum * cs / den2;
            const double dCov = 2.0 * lum / den2;
            ca[i] = dMu - 2.0 * mx[i] * dVar - my[i] * dCov;
            cb[i] = dVar;
            cc[i] = dCov;
        }
        if (gradA) {
            const auto ga = blur(ca, w, h), gb = blur(cb, w, h), gc = blur(cc, w, h);
            for (std::size_t i = 0; i < np; ++i)
                (*gradA)[i * nc + c] = (ga[i] + 2.0 * x[i] * gb[i] + y[i] * gc[i]) / count;
        }
    }
    return total / count;
}

} // namespace

double ssim(const Image &a, const Image &b) { return ssim_impl(a, b, nullptr); }

double ssim_with_gradient(const Image &a, const Image &b, std::vector<double> &gradA) {
    return ssim_impl(a, b, &gradA);
}

double srgb_encode(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double srgb_decode(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

namespace {

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool is_color_channel(int channels, int c) {
    // Gray+alpha and RGBA carry alpha in the last channel.
    return !((channels == 2 || channels == 4) && c == channels - 1);
}

} // namespace

Image read_png(const std::filesystem::path &path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp)
        throw IoError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int colorType = png_get_color_type(png, info);
    if (colorType == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (colorType == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const std::size_t rowBytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buffer(rowBytes * static_cast<std::size_t>(h));
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[y] = buffer.data() + rowBytes * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(w, h, channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const std::size_t idx = static_cast<std::size_t>(x) * channels + c;
                double v;
                if (depth == 16) {
                    const unsigned hi = rows[y][2 * idx], lo = rows[y][2 * idx + 1];
                    v = static_cast<double>((hi << 8) | lo) / 65535.0;
                } else {
                    v = static_cast<double>(rows[y][idx]) / 255.0;
                    if (is_color_channel(channels, c))
                        v = srgb_decode(v);
                }
                img.at(x, y, c) = v;
            }
    return img;
}

void write_png(const std::filesystem::path &path, const Image &image, PngDepth depth) {
    const int nc = image.channels;
    if (nc < 1 || nc > 4)
        throw DimensionError("PNG images need 1-4 channels");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp)
        throw IoError("cannot create " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    static constexpr int kTypes[] = {PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                     PNG_COLOR_TYPE_RGB_ALPHA};
    const int bits = static_cast<int>(depth);
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
                 bits, kTypes[nc - 1], PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t bytesPer = bits / 8;
    std::vector<png_byte> row(static_cast<std::size_t>(image.width) * nc * bytesPer);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < nc; ++c) {
                const std::size_t idx = static_cast<std::size_t>(x) * nc + c;
                const double v = std::clamp(image.at(x, y, c), 0.0, 1.0);
                if (bits == 16) {
                    const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
                    row[2 * idx] = static_cast<png_byte>(q >> 8);
                    row[2 * idx + 1] = static_cast<png_byte>(q & 0xFF);
                } else {
                    const double e = is_color_channel(nc, c) ? srgb_encode(v) : v;
                    row[idx] = static_cast<png_byte>(std::lround(e * 255.0));
                }
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_pfm(const std::filesystem::path &path, const Image &rgb) {
    if (rgb.channels != 3)
        throw DimensionError("PFM output expects 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot create " + path.string());
    out << "PF\n" << rgb.width << " " << rgb.height << "\n-1.0\n";
    std::vector<float> row(static_cast<std::size_t>(rgb.width) * 3);
    for (int y = rgb.height - 1; y >= 0; --y) {
        for (int x = 0; x < rgb.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + c] = static_cast<float>(rgb.at(x, y, c));
        out.write(reinterpret_cast<const char *>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out)
        throw IoError("failed writing " + path.string());
}

Image read_pfm(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    in.get();
    if (magic != "PF" || w <= 0 || h <= 0 || scale >= 0.0)
        throw IoError("unsupported PFM " + path.string());
    Image img(w, h, 3);
    std::vector<float> row(static_cast<std::size_t>(w) * 3);
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char *>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in)
            throw IoError("truncated PFM " + path.string());
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = row[static_cast<std::size_t>(x) * 3 + c];
    }
    return img;
}

} // namespace handsplat
