// Loss terms: per-pixel L1 color loss, Eikonal regularizer, silhouette BCE,
// and their weighted sum. Tape versions drive training; double versions
// serve logging and oracles.
#pragma once

#include <vector>

#include "srvol/common.hpp"
#include "srvol/fields.hpp"
#include "srvol/tape.hpp"

namespace srvol {

struct LossWeights {
    double lambda1 = 0.1;  // eikonal
    double lambda2 = 0.1;  // mask

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0) throw SpecError("loss weights must be >= 0");
    }
};

struct LossBreakdown {
    double rgb = 0.0;
    double eikonal = 0.0;
    double mask = 0.0;
    double total = 0.0;
    std::size_t rgb_batch = 0;
    std::size_t eikonal_batch = 0;
    std::size_t mask_batch = 0;
};

// ---------------------------------------------------------------- rgb L1

inline double rgb_l1(const std::vector<Vec3>& rendered, const std::vector<Vec3>& observed) {
    if (rendered.size() != observed.size()) throw SpecError("rgb_l1: batch length mismatch");
    if (rendered.empty()) throw SpecError("rgb_l1: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        acc += std::abs(rendered[i].x - observed[i].x) + std::abs(rendered[i].y - observed[i].y) +
               std::abs(rendered[i].z - observed[i].z);
    }
    return acc / double(rendered.size());
}

inline ad::Value rgb_l1(ad::Tape& tape, const std::vector<ad::Vec3v>& rendered,
                        const std::vector<Vec3>& observed) {
    using namespace ad;
    if (rendered.size() != observed.size()) throw SpecError("rgb_l1: batch length mismatch");
    if (rendered.empty()) throw SpecError("rgb_l1: empty batch");
    Value acc = tape.constant(0.0);
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        acc = acc + abs(rendered[i].x - observed[i].x) + abs(rendered[i].y - observed[i].y) +
              abs(rendered[i].z - observed[i].z);
    }
    return acc / double(rendered.size());
}

// ---------------------------------------------------------------- eikonal

// mean of (|grad d| - 1)^2 over the sample points
inline ad::Value eikonal_loss(ad::Tape& tape, const FieldSet& fields,
                              const std::vector<Vec3>& points) {
    using namespace ad;
    if (points.empty()) throw SpecError("eikonal_loss: empty batch");
    Value acc = tape.constant(0.0);
    for (const Vec3& x : points) {
        SdfSample s = fields.sdf(tape, x);
        Value g2 = s.gradient.x * s.gradient.x + s.gradient.y * s.gradient.y +
                   s.gradient.z * s.gradient.z;
        Value len = sqrt(g2 + 1e-18);
        acc = acc + (len - 1.0) * (len - 1.0);
    }
    return acc / double(points.size());
}

// oracle-friendly version over an arbitrary gradient field
inline double eikonal_loss(const std::vector<Vec3>& gradients) {
    if (gradients.empty()) throw SpecError("eikonal_loss: empty batch");
    double acc = 0.0;
    for (const Vec3& g : gradients) {
        const double d = norm(g) - 1.0;
        acc += d * d;
    }
    return acc / double(gradients.size());
}

// Eikonal sample distribution: half uniform in the unit sphere, half Gaussian
// perturbations (sigma = 0.05) of surface-adjacent ray samples.
inline std::vector<Vec3> eikonal_points(std::size_t count, const std::vector<Vec3>& near_surface,
                                        Rng& rng) {
    std::vector<Vec3> pts;
    pts.reserve(count);
    const std::size_t n_near = near_surface.empty() ? 0 : count / 2;
    for (std::size_t i = 0; i < n_near; ++i) {
        const Vec3& base = near_surface[rng.uniform_int(near_surface.size())];
        pts.push_back(base + Vec3{0.05 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal()});
    }
    while (pts.size() < count) {
        Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        if (dot(p, p) <= 1.0) pts.push_back(p);
    }
    return pts;
}

// ---------------------------------------------------------------- mask BCE

inline constexpr double kBceEps = 1e-6;

inline double mask_bce(const std::vector<double>& mask, const std::vector<double>& weight_sums) {
    if (mask.size() != weight_sums.size()) throw SpecError("mask_bce: batch length mismatch");
    if (mask.empty()) throw SpecError("mask_bce: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) throw SpecError("mask_bce: mask must be binary");
        const double w = std::clamp(weight_sums[i], kBceEps, 1.0 - kBceEps);
        acc -= mask[i] * std::log(w) + (1.0 - mask[i]) * std::log(1.0 - w);
    }
    return acc / double(mask.size());
}

inline ad::Value mask_bce(ad::Tape& tape, const std::vector<double>& mask,
                          const std::vector<ad::Value>& weight_sums) {
    using namespace ad;
    if (mask.size() != weight_sums.size()) throw SpecError("mask_bce: batch length mismatch");
    if (mask.empty()) throw SpecError("mask_bce: empty batch");
    Value acc = tape.constant(0.0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) throw SpecError("mask_bce: mask must be binary");
        Value w = min(max(weight_sums[i], kBceEps), 1.0 - kBceEps);
        acc = acc - (mask[i] * log(w) + (1.0 - mask[i]) * log(1.0 - w));
    }
    return acc / double(mask.size());
}

// ---------------------------------------------------------------- total

inline LossBreakdown total_loss(double rgb, double eikonal, double mask,
                                const LossWeights& weights) {
    weights.validate();
    if (rgb < 0.0 || eikonal < 0.0 || mask < 0.0)
        throw SpecError("loss terms must be >= 0");
    LossBreakdown out;
    out.rgb = rgb;
    out.eikonal = eikonal;
    out.mask = mask;
    out.total = rgb + weights.lambda1 * eikonal + weights.lambda2 * mask;
    return out;
}

inline ad::Value total_loss(ad::Tape& tape, ad::Value rgb, ad::Value eikonal, ad::Value mask,
                            const LossWeights& weights) {
    weights.validate();
    (void)tape;
    return rgb + weights.lambda1 * eikonal + weights.lambda2 * mask;
}

}  // namespace srvol
