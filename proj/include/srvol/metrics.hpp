// Image and geometry quality metrics: PSNR, SSIM on luminance, and mean
// angular error of normal maps.
#pragma once

#include <vector>

#include "srvol/common.hpp"
#include "srvol/image.hpp"

namespace srvol {

inline constexpr double kPsnrCap = 99.0;

// PSNR in dB against a peak signal of 1.0, over all channels; capped so that
// identical images compare cleanly.
inline double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw SpecError("psnr: shape mismatch");
    if (a.data.empty()) throw SpecError("psnr: empty image");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= double(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

namespace metrics_detail {

inline std::vector<double> luminance(const Image& img) {
    std::vector<double> lum(std::size_t(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (img.channels == 3) {
                lum[std::size_t(y) * img.width + x] = 0.2126 * img.at(x, y, 0) +
                                                      0.7152 * img.at(x, y, 1) +
                                                      0.0722 * img.at(x, y, 2);
            } else {
                lum[std::size_t(y) * img.width + x] = img.at(x, y, 0);
            }
        }
    return lum;
}

}  // namespace metrics_detail

// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// dynamic range 1, computed on Rec.709 luminance. Windows are fully interior;
// images smaller than the window fall back to a single global window.
inline double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw SpecError("ssim: shape mismatch");
    if (a.channels != 1 && a.channels != 3) throw SpecError("ssim: need 1 or 3 channels");
    const std::vector<double> la = metrics_detail::luminance(a);
    const std::vector<double> lb = metrics_detail::luminance(b);

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int half = std::min({5, a.width / 2, a.height / 2});
    const int w = 2 * half + 1;
    std::vector<double> kernel(std::size_t(w) * w);
    double ksum = 0.0;
    const double sigma = 1.5;
    for (int j = -half; j <= half; ++j)
        for (int i = -half; i <= half; ++i) {
            const double g = std::exp(-0.5 * (i * i + j * j) / (sigma * sigma));
            kernel[std::size_t(j + half) * w + (i + half)] = g;
            ksum += g;
        }
    for (double& k : kernel) k /= ksum;

    double total = 0.0;
    int count = 0;
    for (int y = half; y < a.height - half; ++y)
        for (int x = half; x < a.width - half; ++x) {
            double mu_a = 0, mu_b = 0;
            for (int j = -half; j <= half; ++j)
                for (int i = -half; i <= half; ++i) {
                    const double k = kernel[std::size_t(j + half) * w + (i + half)];
                    mu_a += k * la[std::size_t(y + j) * a.width + (x + i)];
                    mu_b += k * lb[std::size_t(y + j) * a.width + (x + i)];
                }
            double var_a = 0, var_b = 0, cov = 0;
            for (int j = -half; j <= half; ++j)
                for (int i = -half; i <= half; ++i) {
                    const double k = kernel[std::size_t(j + half) * w + (i + half)];
                    const double da = la[std::size_t(y + j) * a.width + (x + i)] - mu_a;
                    const double db = lb[std::size_t(y + j) * a.width + (x + i)] - mu_b;
                    var_a += k * da * da;
                    var_b += k * db * db;
                    cov += k * da * db;
                }
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++count;
        }
    if (count == 0) throw SpecError("ssim: image smaller than the window");
    return total / count;
}

// Mean angular error in degrees between two normal maps, restricted to pixels
// where the mask (if given) is 1. Normals are renormalized before comparison.
inline double normal_mae_degrees(const Image& a, const Image& b, const Image* mask = nullptr) {
    if (!a.same_shape(b)) throw SpecError("normal_mae: shape mismatch");
    if (a.channels != 3) throw SpecError("normal_mae: need 3 channels");
    if (mask && (mask->width != a.width || mask->height != a.height))
        throw SpecError("normal_mae: mask shape mismatch");
    double total = 0.0;
    int count = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (mask && mask->at(x, y, 0) < 0.5) continue;
            Vec3 na{a.at(x, y, 0), a.at(x, y, 1), a.at(x, y, 2)};
            Vec3 nb{b.at(x, y, 0), b.at(x, y, 1), b.at(x, y, 2)};
            const double la = norm(na), lb = norm(nb);
            if (la < 1e-12 || lb < 1e-12) continue;  // undefined normal
            const double c = std::clamp(dot(na, nb) / (la * lb), -1.0, 1.0);
            total += std::acos(c) * 180.0 / kPi;
            ++count;
        }
    if (count == 0) throw SpecError("normal_mae: no valid pixels");
    return total / count;
}

}  // namespace srvol
