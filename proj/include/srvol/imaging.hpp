// Image formation: differentiable per-ray volume rendering of the field set,
// PSF pixel sampling (direct / convolved / Monte-Carlo), and full-frame
// rendering with per-pixel RNG substreams.
#pragma once

#include <cstdint>
#include <vector>

#include "srvol/camera.hpp"
#include "srvol/common.hpp"
#include "srvol/fields.hpp"
#include "srvol/image.hpp"
#include "srvol/shading.hpp"
#include "srvol/tape.hpp"
#include "srvol/volume.hpp"

namespace srvol {

// -------------------------------------------------------------- psf

enum class PsfKind { Dirac, Gaussian };

struct PsfKernel {
    PsfKind kind = PsfKind::Dirac;
    double sigma = 0.5;  // LR pixels, Gaussian only

    void validate() const {
        if (kind == PsfKind::Gaussian && sigma <= 0.0)
            throw SpecError("Gaussian PSF requires positive sigma");
    }
};

inline std::vector<Vec2> psf_sample_offsets(const PsfKernel& kernel, int n_samples, Rng& rng) {
    if (n_samples < 1) throw SpecError("psf_sample_offsets: need at least one sample");
    kernel.validate();
    std::vector<Vec2> offsets(n_samples, Vec2{0.0, 0.0});
    if (kernel.kind == PsfKind::Gaussian)
        for (Vec2& q : offsets) q = {kernel.sigma * rng.normal(), kernel.sigma * rng.normal()};
    return offsets;
}

// -------------------------------------------------------------- settings

struct RenderSettings {
    PsfKernel kernel;
    int n_psf = 9;                     // Monte-Carlo PSF samples per pixel
    int m_samples = 32;                // samples per ray
    SampleStrategy strategy = SampleStrategy::TwoPassImportance;
    bool clip_to_unit_sphere = true;   // silhouette mode; else far plane
    double far_plane = 4.0;
    Vec3 background{0, 0, 0};
    double background_eps = 1e-4;      // W below this flags a background pixel
    const SdfProbe* shadow_probe = nullptr;  // sphere-traced visibility (relighting)
};

// -------------------------------------------------------------- per-ray

namespace imaging_detail {

// scalar dot of two taped 3-vectors
inline ad::Value dot_vec3(const ad::Vec3v& a, const ad::Vec3v& b) {
    return a.x * b.x + a.y * b.y + a.z * b.z;
}

}  // namespace imaging_detail

struct RayRender {
    ad::Vec3v rgb;          // background-composited radiance
    ad::Value weight_sum;   // W before compositing
    NormalDepth geometry;   // primal expected normal/depth
    bool hit_domain = true; // false: ray missed the unit sphere entirely
};

// Renders one ray against the current fields on the given tape. The same
// code path serves training (read adjoints) and evaluation (read primals).
inline RayRender render_ray(ad::Tape& tape, const FieldSet& fields, const Ray& ray,
                            const LightSpec& light, const RenderSettings& settings, Rng& rng) {
    using namespace ad;
    RayRender out;

    DensityProbe probe;
    if (settings.strategy == SampleStrategy::TwoPassImportance) {
        probe = [&fields](const Vec3& x) {
            ParameterStore& store = fields.store();
            Tape scratch(&store);
            return density_sigma(value_of(fields.sdf_value(scratch, x)), fields.alpha(),
                                 fields.beta());
        };
    }
    const std::vector<double> ts = sample_ray(ray, settings.m_samples, settings.strategy, rng, probe);

    Value alpha = exp(tape.param(fields.alpha_segment()));
    Value beta = exp(tape.param(fields.beta_segment()));

    std::vector<Value> sigmas;
    std::vector<Vec3v> radiance;
    std::vector<Vec3> primal_normals;
    sigmas.reserve(ts.size());
    radiance.reserve(ts.size());
    primal_normals.reserve(ts.size());

    for (double t : ts) {
        const Vec3 x = ray.at(t);
        SdfSample s = fields.sdf(tape, x);
        sigmas.push_back(density_sigma(s.value, alpha, beta));

        BrdfSample b = fields.brdf(tape, x);
        Material<Value> mat{b.diffuse, b.specular_albedo, b.roughness};

        Vec3v n;
        if (s.degenerate) {
            // view-facing fallback, flagged via the sample's primal normal
            n = make_vec3(tape, ray.direction * -1.0);
            primal_normals.push_back(ray.direction * -1.0);
        } else {
            Value glen = sqrt(imaging_detail::dot_vec3(s.gradient, s.gradient) + 1e-18);
            n = {s.gradient.x / glen, s.gradient.y / glen, s.gradient.z / glen};
            primal_normals.push_back(s.normal);
        }

        if (!light.position) {
            radiance.push_back(radiance_colocated(x, n, ray.origin, mat, light.intensity));
        } else {
            radiance.push_back(radiance_point_light(x, n, ray.direction * -1.0, light, mat,
                                                    settings.shadow_probe));
        }
    }

    RaySamplesT samples = compute_weights(tape, ts, sigmas);
    out.weight_sum = samples.weight_sum;
    Vec3v fg = accumulate_radiance(tape, samples.weight, radiance);
    Value bg_w = 1.0 - samples.weight_sum;
    out.rgb = {fg.x + bg_w * settings.background.x, fg.y + bg_w * settings.background.y,
               fg.z + bg_w * settings.background.z};

    RaySamples primal;
    primal.t = ts;
    primal.weight.reserve(ts.size());
    for (const Value& w : samples.weight) primal.weight.push_back(value_of(w));
    for (double w : primal.weight) primal.weight_sum += w;
    out.geometry = expected_normal_depth(primal, primal_normals, settings.background_eps);
    return out;
}

// -------------------------------------------------------------- per-pixel

struct PixelRender {
    ad::Vec3v rgb;
    ad::Value weight;         // taped W (Dirac) / mean W (MC), for the mask loss
    double weight_sum = 0.0;  // primal W of the center ray (Dirac) / mean (MC)
    NormalDepth geometry;
    bool background = true;
};

// Eq. 9 Monte-Carlo PSF estimate at pixel p. A Dirac kernel renders the
// center ray exactly once, so it is bitwise identical to the direct model.
inline PixelRender render_pixel_psf(ad::Tape& tape, const FieldSet& fields, const Camera& cam,
                                    const Vec2& p, const LightSpec& light,
                                    const RenderSettings& settings, Rng& rng) {
    using namespace ad;
    PixelRender out;
    settings.kernel.validate();
    if (settings.n_psf < 1) throw SpecError("render_pixel_psf: n_psf must be >= 1");

    const bool dirac = settings.kernel.kind == PsfKind::Dirac;
    const std::vector<Vec2> offsets =
        dirac ? std::vector<Vec2>{Vec2{0.0, 0.0}}
              : psf_sample_offsets(settings.kernel, settings.n_psf, rng);

    Vec3v acc = make_vec3(tape, {0, 0, 0});
    Value wacc = tape.constant(0.0);
    double wsum = 0.0;
    NormalDepth best_geom;
    double best_w = -1.0;
    bool any_hit = false;

    for (const Vec2& q : offsets) {
        Ray ray;
        const Vec2 jittered{p.x - q.x, p.y - q.y};
        if (!pixel_ray(cam, jittered, settings.clip_to_unit_sphere, settings.far_plane, ray)) {
            acc.x = acc.x + settings.background.x;
            acc.y = acc.y + settings.background.y;
            acc.z = acc.z + settings.background.z;
            continue;
        }
        any_hit = true;
        RayRender r = render_ray(tape, fields, ray, light, settings, rng);
        acc.x = acc.x + r.rgb.x;
        acc.y = acc.y + r.rgb.y;
        acc.z = acc.z + r.rgb.z;
        wacc = wacc + r.weight_sum;
        const double w = value_of(r.weight_sum);
        wsum += w;
        if (w > best_w) {
            best_w = w;
            best_geom = r.geometry;
        }
    }
    if (dirac) {
        out.rgb = acc;  // single sample: no averaging, keeps Eq. 7 bitwise
        out.weight = wacc;
        out.weight_sum = wsum;
    } else {
        const double inv = 1.0 / double(offsets.size());
        out.rgb = {acc.x * inv, acc.y * inv, acc.z * inv};
        out.weight = wacc * inv;
        out.weight_sum = wsum * inv;
    }
    out.geometry = any_hit ? best_geom : NormalDepth{{0, 0, 1}, 0.0, 0.0, true};
    out.background = out.weight_sum < settings.background_eps;
    return out;
}

// -------------------------------------------------------------- full frame

struct FrameRender {
    Image rgb;      // 3-channel linear
    Image weight;   // 1-channel W map
    Image normals;  // 3-channel expected normals (world space)
    Image depth;    // 1-channel expected depth
    Image mask;     // 1-channel foreground flags
};

// Deterministic full-frame render; pixel (x, y) draws from the substream
// keyed (seed, pixel index, jitter stream, epoch).
inline FrameRender render_image(const FieldSet& fields, const Camera& cam, const LightSpec& light,
                                const RenderSettings& settings, std::uint64_t seed,
                                std::uint64_t epoch = 0) {
    cam.validate();
    light.validate();
    FrameRender frame;
    frame.rgb = Image(cam.width, cam.height, 3);
    frame.weight = Image(cam.width, cam.height, 1);
    frame.normals = Image(cam.width, cam.height, 3);
    frame.depth = Image(cam.width, cam.height, 1);
    frame.mask = Image(cam.width, cam.height, 1);

    ad::Tape tape(&fields.store());
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            tape.clear();
            const std::uint64_t pixel = std::uint64_t(y) * cam.width + x;
            Rng rng = Rng::substream(seed, pixel, 0, epoch);
            const Vec2 p{x + 0.5, y + 0.5};
            PixelRender r = render_pixel_psf(tape, fields, cam, p, light, settings, rng);
            frame.rgb.at(x, y, 0) = ad::value_of(r.rgb.x);
            frame.rgb.at(x, y, 1) = ad::value_of(r.rgb.y);
            frame.rgb.at(x, y, 2) = ad::value_of(r.rgb.z);
            frame.weight.at(x, y, 0) = r.weight_sum;
            frame.normals.at(x, y, 0) = r.geometry.normal.x;
            frame.normals.at(x, y, 1) = r.geometry.normal.y;
            frame.normals.at(x, y, 2) = r.geometry.normal.z;
            frame.depth.at(x, y, 0) = r.geometry.depth;
            frame.mask.at(x, y, 0) = r.background ? 0.0 : 1.0;
        }
    return frame;
}

}  // namespace srvol
