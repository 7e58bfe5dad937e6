// In-memory linear images and 16-bit PNG I/O (libpng). Pixel values are
// linear radiance; files store value * exposure quantized to 16 bits.
#pragma once

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "srvol/common.hpp"

namespace srvol {

// Row-major, top-left origin, interleaved channels, linear values.
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

    double& at(int x, int y, int c) {
        return data[(std::size_t(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c) const {
        return data[(std::size_t(y) * width + x) * channels + c];
    }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

namespace png_detail {

struct FileCloser {
    std::FILE* f = nullptr;
    ~FileCloser() { if (f) std::fclose(f); }
};

}  // namespace png_detail

// 16-bit PNG write; `exposure` scales linear values into [0,1] before
// quantization, clipping above 1.
inline void write_png16(const std::string& path, const Image& img, double exposure = 1.0) {
    if (img.channels != 1 && img.channels != 3)
        throw IoError("write_png16: only 1- or 3-channel images: " + path);
    if (exposure <= 0.0) throw IoError("write_png16: exposure must be positive");

    png_detail::FileCloser fc{std::fopen(path.c_str(), "wb")};
    if (!fc.f) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng init failed: " + path);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failed: " + path);
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, img.width, img.height, 16,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(std::size_t(img.width) * img.channels * 2);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::clamp(img.at(x, y, c) * exposure, 0.0, 1.0);
                const auto q = std::uint16_t(std::lround(v * 65535.0));
                row[(std::size_t(x) * img.channels + c) * 2] = png_byte(q >> 8);
                row[(std::size_t(x) * img.channels + c) * 2 + 1] = png_byte(q & 0xff);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads an 8- or 16-bit gray/RGB PNG back to linear values (divided by the
// exposure used at write time).
inline Image read_png(const std::string& path, double exposure = 1.0) {
    if (exposure <= 0.0) throw IoError("read_png: exposure must be positive");
    png_detail::FileCloser fc{std::fopen(path.c_str(), "rb")};
    if (!fc.f) throw IoError("cannot open for reading: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fc.f) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("not a PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng init failed: " + path);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG: " + path);
    }
    png_init_io(png, fc.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int width = int(png_get_image_width(png, info));
    const int height = int(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int channels = int(png_get_channels(png, info));
    if (channels != 1 && channels != 3)
        throw IoError("unsupported channel count in " + path);

    Image img(width, height, channels);
    const double denom = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) {
                double v;
                if (bit_depth == 16) {
                    const std::size_t o = (std::size_t(x) * channels + c) * 2;
                    v = ((row[o] << 8) | row[o + 1]) / denom;
                } else {
                    v = row[std::size_t(x) * channels + c] / denom;
                }
                img.at(x, y, c) = v / exposure;
            }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// 8-bit binary mask (0/255).
inline void write_mask_png(const std::string& path, const Image& mask) {
    if (mask.channels != 1) throw IoError("write_mask_png: single channel required: " + path);
    png_detail::FileCloser fc{std::fopen(path.c_str(), "wb")};
    if (!fc.f) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng init failed: " + path);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failed: " + path);
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, mask.width, mask.height, 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(mask.width);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x)
            row[x] = mask.at(x, y, 0) > 0.5 ? 255 : 0;
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_mask_png(const std::string& path) {
    Image img = read_png(path);
    if (img.channels != 1) throw IoError("mask is not single channel: " + path);
    for (double& v : img.data) v = v > 0.5 ? 1.0 : 0.0;
    return img;
}

// ------------------------------------------------------------- resampling

namespace img_detail {

// Catmull-Rom cubic kernel
inline double cubic(double t) {
    const double a = std::abs(t);
    if (a < 1.0) return 1.5 * a * a * a - 2.5 * a * a + 1.0;
    if (a < 2.0) return -0.5 * a * a * a + 2.5 * a * a - 4.0 * a + 2.0;
    return 0.0;
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace img_detail

// Bicubic upsampling by an integer factor; the plain SR baseline.
inline Image bicubic_upsample(const Image& lr, int factor) {
    if (factor < 1) throw SpecError("bicubic_upsample: factor must be >= 1");
    Image hr(lr.width * factor, lr.height * factor, lr.channels);
    for (int y = 0; y < hr.height; ++y) {
        const double sy = (y + 0.5) / factor - 0.5;
        const int y0 = int(std::floor(sy));
        for (int x = 0; x < hr.width; ++x) {
            const double sx = (x + 0.5) / factor - 0.5;
            const int x0 = int(std::floor(sx));
            for (int c = 0; c < lr.channels; ++c) {
                double acc = 0.0, wsum = 0.0;
                for (int j = -1; j <= 2; ++j)
                    for (int i = -1; i <= 2; ++i) {
                        const double w = img_detail::cubic(sx - (x0 + i)) *
                                         img_detail::cubic(sy - (y0 + j));
                        const int px = img_detail::clampi(x0 + i, 0, lr.width - 1);
                        const int py = img_detail::clampi(y0 + j, 0, lr.height - 1);
                        acc += w * lr.at(px, py, c);
                        wsum += w;
                    }
                hr.at(x, y, c) = acc / wsum;
            }
        }
    }
    return hr;
}

}  // namespace srvol
