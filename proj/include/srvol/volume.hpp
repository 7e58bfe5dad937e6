// SDF-to-density transform, ray sampling, transmittance weights, and
// quadrature accumulation. Everything here is per-ray and pure given a
// parameter snapshot.
#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "srvol/common.hpp"
#include "srvol/tape.hpp"

namespace srvol {

// ---------------------------------------------------------------- density

// CDF of a zero-mean Laplace distribution with scale beta, evaluated on the
// numerically stable branch (never exponentiates a positive argument).
inline double laplace_cdf(double s, double beta) {
    if (beta <= 0.0) throw SpecError("laplace_cdf: beta must be positive");
    return s <= 0.0 ? 0.5 * std::exp(s / beta) : 1.0 - 0.5 * std::exp(-s / beta);
}

// Tape version; the branch is chosen from the primal value, both branches
// have the same derivative exp(-|s|/beta)/(2 beta) at the seam.
inline ad::Value laplace_cdf(ad::Value s, ad::Value beta) {
    using namespace ad;
    if (value_of(beta) <= 0.0) throw SpecError("laplace_cdf: beta must be positive");
    if (value_of(s) <= 0.0) return 0.5 * exp(s / beta);
    return 1.0 - 0.5 * exp(-s / beta);
}

// sigma = alpha * Psi_beta(-d)
inline double density_sigma(double sdf_value, double alpha, double beta) {
    return alpha * laplace_cdf(-sdf_value, beta);
}
inline ad::Value density_sigma(ad::Value sdf_value, ad::Value alpha, ad::Value beta) {
    return alpha * laplace_cdf(-sdf_value, beta);
}

// ---------------------------------------------------------------- rays

struct Ray {
    Vec3 origin;
    Vec3 direction;  // unit
    double t_near = 0.0;
    double t_far = 0.0;

    Vec3 at(double t) const { return origin + direction * t; }

    void validate() const {
        if (std::abs(norm(direction) - 1.0) > 1e-12)
            throw SpecError("ray direction is not unit length");
        if (t_near < 0.0 || t_near >= t_far)
            throw SpecError("ray requires 0 <= t_near < t_far");
    }
};

// Intersection parameters of a ray with the sphere |p| = radius; false when
// the ray misses or the sphere lies entirely behind the origin.
inline bool intersect_sphere(const Vec3& origin, const Vec3& dir, double radius,
                             double& t0, double& t1) {
    const double b = dot(origin, dir);
    const double c = dot(origin, origin) - radius * radius;
    const double disc = b * b - c;
    if (disc < 0.0) return false;
    const double root = std::sqrt(disc);
    t0 = -b - root;
    t1 = -b + root;
    if (t1 <= 0.0) return false;
    t0 = std::max(t0, 0.0);
    return true;
}

// ---------------------------------------------------------------- sampling

enum class SampleStrategy { Stratified, TwoPassImportance };

using DensityProbe = std::function<double(const Vec3&)>;

inline std::vector<double> stratified_samples(const Ray& ray, int m, Rng& rng) {
    std::vector<double> ts(m);
    const double span = (ray.t_far - ray.t_near) / m;
    for (int i = 0; i < m; ++i) ts[i] = ray.t_near + (i + rng.uniform()) * span;
    return ts;
}

// Plain-double transmittance weights, shared by the sampler's first pass and
// by evaluation paths that do not need gradients. The final sample reuses
// the preceding interval width so it still carries weight.
struct RaySamples {
    std::vector<double> t;
    std::vector<double> sigma;
    std::vector<double> weight;
    double weight_sum = 0.0;
};

inline RaySamples compute_weights(const std::vector<double>& ts, const std::vector<double>& sigmas) {
    if (ts.size() != sigmas.size()) throw SpecError("compute_weights: length mismatch");
    const int m = int(ts.size());
    if (m < 2) throw SpecError("compute_weights: need at least 2 samples");
    for (int i = 1; i < m; ++i)
        if (!(ts[i] > ts[i - 1])) throw SpecError("compute_weights: t not strictly ascending");

    RaySamples out;
    out.t = ts;
    out.sigma = sigmas;
    out.weight.resize(m);
    // w_i = T_i (1 - exp(-sigma_i delta_i)): first-order equal to the Riemann
    // form delta*sigma*T but telescoping, so W = 1 - T_end stays in [0,1]
    double transmittance = 1.0;
    for (int i = 0; i < m; ++i) {
        const double delta = i + 1 < m ? ts[i + 1] - ts[i] : ts[m - 1] - ts[m - 2];
        const double decay = std::exp(-sigmas[i] * delta);
        out.weight[i] = transmittance * (1.0 - decay);
        out.weight_sum += out.weight[i];
        transmittance *= decay;
    }
    return out;
}

// Tape counterpart; weights and their sum stay differentiable.
struct RaySamplesT {
    std::vector<double> t;
    std::vector<Vec3> position;
    std::vector<ad::Value> sigma;
    std::vector<ad::Value> weight;
    ad::Value weight_sum;
};

inline RaySamplesT compute_weights(ad::Tape& tape, const std::vector<double>& ts,
                                   const std::vector<ad::Value>& sigmas) {
    if (ts.size() != sigmas.size()) throw SpecError("compute_weights: length mismatch");
    const int m = int(ts.size());
    if (m < 2) throw SpecError("compute_weights: need at least 2 samples");

    RaySamplesT out;
    out.t = ts;
    out.sigma = sigmas;
    out.weight.reserve(m);
    ad::Value transmittance = tape.constant(1.0);
    ad::Value wsum = tape.constant(0.0);
    for (int i = 0; i < m; ++i) {
        const double delta = i + 1 < m ? ts[i + 1] - ts[i] : ts[m - 1] - ts[m - 2];
        ad::Value decay = ad::exp(sigmas[i] * (-delta));
        ad::Value w = transmittance * (1.0 - decay);
        out.weight.push_back(w);
        wsum = wsum + w;
        if (i + 1 < m) transmittance = transmittance * decay;
    }
    out.weight_sum = wsum;
    return out;
}

// Stratified, or two passes where the second half is drawn from the first
// pass's discrete weight distribution (dense samples near the surface).
inline std::vector<double> sample_ray(const Ray& ray, int m, SampleStrategy strategy, Rng& rng,
                                      const DensityProbe& density = {}) {
    if (m < 2) throw SpecError("sample_ray: need at least 2 samples");
    ray.validate();
    if (strategy == SampleStrategy::Stratified) {
        return stratified_samples(ray, m, rng);
    }
    if (!density) throw SpecError("two-pass sampling requires a density probe");

    const int m1 = std::max(2, m / 2);
    std::vector<double> coarse = stratified_samples(ray, m1, rng);
    std::vector<double> sigmas(m1);
    for (int i = 0; i < m1; ++i) sigmas[i] = density(ray.at(coarse[i]));
    RaySamples pass1 = compute_weights(coarse, sigmas);

    std::vector<double> ts = coarse;
    const int m2 = m - m1;
    if (pass1.weight_sum <= 0.0) {
        for (int i = 0; i < m2; ++i)
            ts.push_back(ray.t_near + rng.uniform() * (ray.t_far - ray.t_near));
    } else {
        for (int i = 0; i < m2; ++i) {
            double u = rng.uniform() * pass1.weight_sum;
            int j = 0;
            while (j + 1 < m1 && u > pass1.weight[j]) u -= pass1.weight[j++];
            // pad by one interval per side: the density is probed at the left
            // sample, so a transition can sit in the neighboring interval
            const double lo = coarse[j > 0 ? j - 1 : 0];
            const double hi = j + 2 < m1 ? coarse[j + 2] : ray.t_far;
            ts.push_back(lo + rng.uniform() * (hi - lo));
        }
    }
    std::sort(ts.begin(), ts.end());
    // enforce strict ascent in the degenerate case of duplicated draws
    for (std::size_t i = 1; i < ts.size(); ++i)
        if (ts[i] <= ts[i - 1]) ts[i] = std::nextafter(ts[i - 1], ray.t_far + 1.0);
    return ts;
}

// ---------------------------------------------------------------- outputs

// L = sum_i w_i * L_i
inline ad::Vec3v accumulate_radiance(ad::Tape& tape, const std::vector<ad::Value>& weights,
                                     const std::vector<ad::Vec3v>& radiance) {
    if (weights.size() != radiance.size())
        throw SpecError("accumulate_radiance: length mismatch");
    ad::Vec3v sum = ad::make_vec3(tape, {0, 0, 0});
    for (std::size_t i = 0; i < weights.size(); ++i) {
        sum.x = sum.x + weights[i] * radiance[i].x;
        sum.y = sum.y + weights[i] * radiance[i].y;
        sum.z = sum.z + weights[i] * radiance[i].z;
    }
    return sum;
}

struct NormalDepth {
    Vec3 normal{0, 0, 1};
    double depth = 0.0;
    double weight_sum = 0.0;
    bool background = false;  // W below threshold
};

inline NormalDepth expected_normal_depth(const RaySamples& samples,
                                         const std::vector<Vec3>& normals,
                                         double background_eps = 1e-4) {
    if (normals.size() != samples.t.size())
        throw SpecError("expected_normal_depth: length mismatch");
    NormalDepth out;
    out.weight_sum = samples.weight_sum;
    if (samples.weight_sum < background_eps) {
        out.background = true;
        return out;
    }
    Vec3 n{0, 0, 0};
    double depth = 0.0;
    for (std::size_t i = 0; i < normals.size(); ++i) {
        n = n + normals[i] * samples.weight[i];
        depth += samples.t[i] * samples.weight[i];
    }
    const double len = norm(n);
    out.normal = len > 1e-12 ? n / len : Vec3{0, 0, 1};
    out.depth = depth / std::max(samples.weight_sum, 1e-12);
    return out;
}

}  // namespace srvol
