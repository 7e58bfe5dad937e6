// Synthetic ground truth: analytic SDF scenes with procedural BRDF fields,
// sphere-traced forward rendering, HR-to-LR degradation, and dataset I/O.
// This module is the oracle the volume renderer is tested against, so it
// never touches the tape or the neural fields.
#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "srvol/camera.hpp"
#include "srvol/image.hpp"
#include "srvol/shading.hpp"
#include "srvol/volume.hpp"

namespace srvol {

// ---------------------------------------------------------------- scene sdf

struct SdfPrimitive {
    enum class Kind { Sphere, Box, Torus } kind = Kind::Sphere;
    Vec3 center{0, 0, 0};
    Vec3 half_extents{0.5, 0.5, 0.5};  // box only
    double radius = 0.5;               // sphere radius / torus major radius
    double minor_radius = 0.1;         // torus only

    double eval(const Vec3& p) const {
        const Vec3 q = p - center;
        switch (kind) {
            case Kind::Sphere:
                return norm(q) - radius;
            case Kind::Box: {
                const Vec3 d{std::abs(q.x) - half_extents.x, std::abs(q.y) - half_extents.y,
                             std::abs(q.z) - half_extents.z};
                const Vec3 outside{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
                const double inside = std::min(std::max(d.x, std::max(d.y, d.z)), 0.0);
                return norm(outside) + inside;
            }
            case Kind::Torus: {
                const double ring = std::sqrt(q.x * q.x + q.y * q.y) - radius;
                return std::sqrt(ring * ring + q.z * q.z) - minor_radius;
            }
        }
        return 0.0;
    }
};

struct SceneSdf {
    std::vector<SdfPrimitive> primitives;
    double smooth_k = 0.0;  // 0: hard min-union; > 0: smooth union

    double eval(const Vec3& p) const {
        if (primitives.empty()) throw SpecError("scene has no primitives");
        if (smooth_k <= 0.0) {
            double d = primitives[0].eval(p);
            for (std::size_t i = 1; i < primitives.size(); ++i)
                d = std::min(d, primitives[i].eval(p));
            return d;
        }
        // -k ln(sum exp(-d_i/k)), computed against the running minimum for
        // numerical stability
        double dmin = primitives[0].eval(p);
        std::vector<double> ds{dmin};
        for (std::size_t i = 1; i < primitives.size(); ++i) {
            ds.push_back(primitives[i].eval(p));
            dmin = std::min(dmin, ds.back());
        }
        double s = 0.0;
        for (double d : ds) s += std::exp(-(d - dmin) / smooth_k);
        return dmin - smooth_k * std::log(s);
    }

    Vec3 gradient(const Vec3& p, double step = 1e-5) const {
        return {(eval({p.x + step, p.y, p.z}) - eval({p.x - step, p.y, p.z})) / (2 * step),
                (eval({p.x, p.y + step, p.z}) - eval({p.x, p.y - step, p.z})) / (2 * step),
                (eval({p.x, p.y, p.z + step}) - eval({p.x, p.y, p.z - step})) / (2 * step)};
    }
};

// ---------------------------------------------------------------- brdf field

struct ProceduralBrdf {
    enum class Pattern { Constant, Checker, Stripes } pattern = Pattern::Constant;
    Vec3 diffuse_a{0.6, 0.6, 0.6};
    Vec3 diffuse_b{0.1, 0.1, 0.1};  // second checker/stripe color
    double period = 0.25;           // world units
    double specular_albedo = 0.0;
    double roughness = 0.5;

    Material<double> eval(const Vec3& p) const {
        Material<double> mat{diffuse_a, specular_albedo, roughness};
        switch (pattern) {
            case Pattern::Constant:
                break;
            case Pattern::Checker: {
                const auto cell = [&](double v) {
                    return int(std::floor(v / period)) & 1;
                };
                if ((cell(p.x) + cell(p.y) + cell(p.z)) & 1) mat.diffuse = diffuse_b;
                break;
            }
            case Pattern::Stripes:
                if (int(std::floor(p.x / period)) & 1) mat.diffuse = diffuse_b;
                break;
        }
        return mat;
    }
};

struct AnalyticScene {
    SceneSdf sdf;
    ProceduralBrdf brdf;
    Vec3 background{0, 0, 0};
    double light_intensity = 6.0;

    // scene must fit in the unit sphere
    void validate() const {
        Rng rng(123456);
        for (int i = 0; i < 4096; ++i) {
            Vec3 p{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
            const double r = norm(p);
            if (r >= 1.0 && sdf.eval(p) < r - 1.0 - 1e-6)
                throw SpecError("scene geometry extends beyond the unit sphere");
        }
    }
};

// ---------------------------------------------------------------- tracing

struct TraceResult {
    bool hit = false;
    bool grazing = false;  // step budget exhausted while still descending
    double t = 0.0;
    Vec3 position{0, 0, 0};
    Vec3 normal{0, 0, 1};
};

inline TraceResult sphere_trace(const SceneSdf& scene, const Ray& ray, int max_steps = 256,
                                double hit_eps = 1e-5) {
    if (std::abs(norm(ray.direction) - 1.0) > 1e-12)
        throw SpecError("sphere_trace: direction must be unit length");
    TraceResult res;
    double t = ray.t_near;
    double prev_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < max_steps; ++i) {
        if (t > ray.t_far) return res;
        const Vec3 p = ray.at(t);
        const double d = scene.eval(p);
        if (std::abs(d) < hit_eps) {
            res.hit = true;
            res.t = t;
            res.position = p;
            res.normal = normalized(scene.gradient(p));
            return res;
        }
        prev_d = d;
        t += d;
        if (d < 0.0) return res;  // overshot into the interior: treat as miss
    }
    res.grazing = scene.eval(ray.at(t)) < prev_d;
    return res;
}

// ---------------------------------------------------------------- views

struct ViewRender {
    Image rgb;      // linear HR
    Image mask;     // 1 = hit
    Image normals;  // world-space GT normals
    Image depth;    // GT depth along the ray
};

inline ViewRender synthesize_view(const AnalyticScene& scene, const Camera& cam,
                                  const LightSpec& light, bool shadows = false) {
    cam.validate();
    light.validate();
    ViewRender out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.mask = Image(cam.width, cam.height, 1);
    out.normals = Image(cam.width, cam.height, 3);
    out.depth = Image(cam.width, cam.height, 1);

    SdfProbe shadow_probe = [&scene](const Vec3& p) { return scene.sdf.eval(p); };

    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            Ray ray;
            Vec3 color = scene.background;
            if (pixel_ray(cam, {x + 0.5, y + 0.5}, false, 6.0, ray)) {
                TraceResult tr = sphere_trace(scene.sdf, ray);
                if (tr.hit) {
                    Material<double> mat = scene.brdf.eval(tr.position);
                    if (!light.position) {
                        color = radiance_colocated(tr.position, tr.normal, cam.center, mat,
                                                   light.intensity);
                    } else {
                        color = radiance_point_light(tr.position, tr.normal,
                                                     normalized(cam.center - tr.position), light,
                                                     mat, shadows ? &shadow_probe : nullptr);
                    }
                    out.mask.at(x, y, 0) = 1.0;
                    out.normals.at(x, y, 0) = tr.normal.x;
                    out.normals.at(x, y, 1) = tr.normal.y;
                    out.normals.at(x, y, 2) = tr.normal.z;
                    out.depth.at(x, y, 0) = tr.t;
                }
            }
            out.rgb.at(x, y, 0) = color.x;
            out.rgb.at(x, y, 1) = color.y;
            out.rgb.at(x, y, 2) = color.z;
        }
    return out;
}

// ---------------------------------------------------------------- degrade

// Gaussian blur (sigma in HR pixels, truncated at 4 sigma, renormalized)
// followed by factor x factor block averaging.
inline Image degrade(const Image& hr, int factor = 4, double psf_sigma_lr = 0.5) {
    if (factor < 1) throw SpecError("degrade: factor must be >= 1");
    if (hr.width % factor != 0 || hr.height % factor != 0)
        throw SpecError("degrade: dimensions must be divisible by the factor");

    const double sigma = psf_sigma_lr * factor;
    const int radius = int(std::ceil(4.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (double& k : kernel) k /= ksum;

    const auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };

    // separable blur with clamped borders
    Image tmp(hr.width, hr.height, hr.channels);
    for (int y = 0; y < hr.height; ++y)
        for (int x = 0; x < hr.width; ++x)
            for (int c = 0; c < hr.channels; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * hr.at(clampi(x + i, hr.width), y, c);
                tmp.at(x, y, c) = acc;
            }
    Image blurred(hr.width, hr.height, hr.channels);
    for (int y = 0; y < hr.height; ++y)
        for (int x = 0; x < hr.width; ++x)
            for (int c = 0; c < hr.channels; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * tmp.at(x, clampi(y + i, hr.height), c);
                blurred.at(x, y, c) = acc;
            }

    Image lr(hr.width / factor, hr.height / factor, hr.channels);
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < lr.height; ++y)
        for (int x = 0; x < lr.width; ++x)
            for (int c = 0; c < hr.channels; ++c) {
                double acc = 0.0;
                for (int j = 0; j < factor; ++j)
                    for (int i = 0; i < factor; ++i)
                        acc += blurred.at(x * factor + i, y * factor + j, c);
                lr.at(x, y, c) = acc * inv;
            }
    return lr;
}

// ---------------------------------------------------------------- manifest

struct ViewEntry {
    Camera camera;          // LR intrinsics
    std::string image_lr;   // paths relative to the dataset directory
    std::string image_hr;
    std::string mask;
    std::string gt_normals;
    std::string gt_depth;
    std::string split = "train";  // train | test | test_noncolocated
    std::optional<Vec3> light_position;  // non-colocated views only
};

struct DatasetManifest {
    int schema = 1;
    int hr_width = 0, hr_height = 0;
    int factor = 4;
    double exposure = 1.0;
    double depth_scale = 4.0;  // depth png stores depth / depth_scale
    double light_intensity = 6.0;
    Vec3 background{0, 0, 0};
    std::vector<ViewEntry> views;

    int lr_width() const { return hr_width / factor; }
    int lr_height() const { return hr_height / factor; }

    void validate() const {
        if (factor < 1) throw SpecError("manifest: factor must be >= 1");
        if (hr_width % factor != 0 || hr_height % factor != 0)
            throw SpecError("manifest: LR dimensions must divide HR dimensions exactly");
        if (exposure <= 0.0 || depth_scale <= 0.0)
            throw SpecError("manifest: scales must be positive");
    }
};

namespace manifest_detail {

inline nlohmann::json vec3_json(const Vec3& v) { return {v.x, v.y, v.z}; }
inline Vec3 vec3_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw IoError("manifest: malformed 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json camera_json(const Camera& c) {
    return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
            {"width", c.width}, {"height", c.height},
            {"rotation", {vec3_json(c.rotation[0]), vec3_json(c.rotation[1]),
                          vec3_json(c.rotation[2])}},
            {"center", vec3_json(c.center)}};
}

inline Camera camera_from(const nlohmann::json& j) {
    Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const auto& r = j.at("rotation");
    c.rotation = {vec3_from(r.at(0)), vec3_from(r.at(1)), vec3_from(r.at(2))};
    c.center = vec3_from(j.at("center"));
    c.validate();
    return c;
}

}  // namespace manifest_detail

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
    m.validate();
    nlohmann::json j;
    j["schema"] = m.schema;
    j["hr_width"] = m.hr_width;
    j["hr_height"] = m.hr_height;
    j["factor"] = m.factor;
    j["exposure"] = m.exposure;
    j["depth_scale"] = m.depth_scale;
    j["light_intensity"] = m.light_intensity;
    j["background"] = manifest_detail::vec3_json(m.background);
    j["views"] = nlohmann::json::array();
    for (const ViewEntry& v : m.views) {
        nlohmann::json e;
        e["camera"] = manifest_detail::camera_json(v.camera);
        e["image_lr"] = v.image_lr;
        e["image_hr"] = v.image_hr;
        e["mask"] = v.mask;
        e["gt_normals"] = v.gt_normals;
        e["gt_depth"] = v.gt_depth;
        e["split"] = v.split;
        if (v.light_position)
            e["light_position"] = manifest_detail::vec3_json(*v.light_position);
        j["views"].push_back(e);
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("missing manifest.json in " + dir.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest.json in " + dir.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.schema = j.at("schema").get<int>();
        m.hr_width = j.at("hr_width").get<int>();
        m.hr_height = j.at("hr_height").get<int>();
        m.factor = j.at("factor").get<int>();
        m.exposure = j.at("exposure").get<double>();
        m.depth_scale = j.at("depth_scale").get<double>();
        m.light_intensity = j.at("light_intensity").get<double>();
        m.background = manifest_detail::vec3_from(j.at("background"));
        for (const auto& e : j.at("views")) {
            ViewEntry v;
            v.camera = manifest_detail::camera_from(e.at("camera"));
            v.image_lr = e.at("image_lr").get<std::string>();
            v.image_hr = e.at("image_hr").get<std::string>();
            v.mask = e.at("mask").get<std::string>();
            v.gt_normals = e.at("gt_normals").get<std::string>();
            v.gt_depth = e.at("gt_depth").get<std::string>();
            v.split = e.at("split").get<std::string>();
            if (e.contains("light_position"))
                v.light_position = manifest_detail::vec3_from(e.at("light_position"));
            m.views.push_back(v);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest.json missing fields in " + dir.string() + ": " + e.what());
    }
    m.validate();
    return m;
}

// ---------------------------------------------------------------- rigs

// Cameras on a sphere of the given radius looking at the origin: uniform
// azimuth on two elevation rings.
inline std::vector<Camera> make_camera_rig(int count, double radius, double fx, int width,
                                           int height, double azimuth_offset = 0.0) {
    std::vector<Camera> rig;
    const double elevations[2] = {0.35, -0.25};  // radians
    for (int i = 0; i < count; ++i) {
        const double az = azimuth_offset + 2.0 * kPi * i / count;
        const double el = elevations[i % 2];
        const Vec3 eye{radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                       radius * std::sin(el)};
        rig.push_back(make_lookat_camera(eye, {0, 0, 0}, fx, fx, width, height));
    }
    return rig;
}

// ---------------------------------------------------------------- dataset

// Renders all views and writes a complete dataset directory.
inline DatasetManifest generate_dataset(const AnalyticScene& scene,
                                        const std::vector<Camera>& train_cams,
                                        const std::vector<Camera>& test_cams,
                                        const std::filesystem::path& dir, int factor = 4,
                                        double exposure = 1.0,
                                        double noncolocated_offset_deg = 30.0) {
    namespace fs = std::filesystem;
    scene.validate();
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "gt");

    DatasetManifest m;
    if (train_cams.empty()) throw SpecError("generate_dataset: no training cameras");
    m.hr_width = train_cams[0].width;
    m.hr_height = train_cams[0].height;
    m.factor = factor;
    m.exposure = exposure;
    m.light_intensity = scene.light_intensity;
    m.background = scene.background;
    m.validate();

    int index = 0;
    auto emit = [&](const Camera& cam, const std::string& split,
                    const std::optional<Vec3>& light_pos) {
        LightSpec light{light_pos, scene.light_intensity};
        ViewRender hr = synthesize_view(scene, cam, light, light_pos.has_value());
        Image lr = degrade(hr.rgb, factor);
        Image lr_mask = degrade(hr.mask, factor);
        for (double& v : lr_mask.data) v = v > 0.5 ? 1.0 : 0.0;

        const std::string tag =
            split + "_" + std::to_string(index++);
        ViewEntry v;
        v.split = split;
        v.light_position = light_pos;
        v.image_hr = "images/" + tag + "_hr.png";
        v.image_lr = "images/" + tag + "_lr.png";
        v.mask = "masks/" + tag + ".png";
        v.gt_normals = "gt/" + tag + "_normals.png";
        v.gt_depth = "gt/" + tag + "_depth.png";

        write_png16((dir / v.image_hr).string(), hr.rgb, exposure);
        write_png16((dir / v.image_lr).string(), lr, exposure);
        write_mask_png((dir / v.mask).string(), lr_mask);
        // normals in [-1,1] -> [0,1]
        Image nenc = hr.normals;
        for (double& x : nenc.data) x = 0.5 * (x + 1.0);
        write_png16((dir / v.gt_normals).string(), nenc, 1.0);
        Image denc = hr.depth;
        for (double& x : denc.data) x /= m.depth_scale;
        write_png16((dir / v.gt_depth).string(), denc, 1.0);

        // LR camera: intrinsics scaled down by the factor
        Camera lrcam = cam;
        lrcam.fx /= factor;
        lrcam.fy /= factor;
        lrcam.cx /= factor;
        lrcam.cy /= factor;
        lrcam.width /= factor;
        lrcam.height /= factor;
        v.camera = lrcam;
        m.views.push_back(v);
    };

    for (const Camera& cam : train_cams) emit(cam, "train", std::nullopt);
    for (const Camera& cam : test_cams) emit(cam, "test", std::nullopt);
    // non-colocated: light rotated around the vertical axis by the offset
    const double ang = noncolocated_offset_deg * kPi / 180.0;
    for (const Camera& cam : test_cams) {
        const Vec3 c = cam.center;
        const Vec3 lp{c.x * std::cos(ang) - c.y * std::sin(ang),
                      c.x * std::sin(ang) + c.y * std::cos(ang), c.z};
        emit(cam, "test_noncolocated", lp);
    }
    write_manifest(m, dir);
    return m;
}

}  // namespace srvol
