// Specular-plus-Lambertian BRDF (GGX normal distribution, Schlick Fresnel,
// Smith-Schlick visibility with k = a/2) and the point-light radiance models.
//
// Scalar type T is either double (analytic/oracle rendering) or ad::Value
// (training); material parameters and normals carry gradients, directions
// and positions are plain geometry.
#pragma once

#include <functional>
#include <optional>

#include "srvol/common.hpp"
#include "srvol/tape.hpp"

namespace srvol {

struct LightSpec {
    std::optional<Vec3> position;  // nullopt = colocated with the camera
    double intensity = 1.0;        // L0, achromatic

    void validate() const {
        if (intensity <= 0.0) throw SpecError("light intensity must be positive");
    }
};

template <typename T>
struct Material {
    Vec3t<T> diffuse;
    T specular_albedo;
    T roughness;
};

struct MaterialEdit {
    bool remove_specular = false;
    std::optional<double> scale_roughness;
    std::optional<Vec3> recolor;
};

namespace shade_detail {

inline double primal(double v) { return v; }
inline double primal(ad::Value v) { return ad::value_of(v); }

template <typename T> T lift(double c, const T& like);
template <> inline double lift<double>(double c, const double&) { return c; }
template <> inline ad::Value lift<ad::Value>(double c, const ad::Value& like) {
    return like.tape->constant(c);
}

// mixed dot: differentiable normal against a fixed direction
template <typename T>
T dot_dir(const Vec3t<T>& n, const Vec3& d) {
    return n.x * d.x + n.y * d.y + n.z * d.z;
}

inline void require_unit(const Vec3& v, const char* what) {
    if (std::abs(norm(v) - 1.0) > 1e-6)
        throw SpecError(std::string("non-unit vector passed to ") + what);
}

template <typename T>
T fifth_power(const T& x) {
    T x2 = x * x;
    return x2 * x2 * x;
}

}  // namespace shade_detail

// f = diffuse/pi + D*F*G1*G1 / (4 (n.wi)(n.wo)), a = roughness^2.
// Both cosines must be positive; callers clamp or zero the contribution.
template <typename T>
Vec3t<T> brdf_eval(const Material<T>& mat, const Vec3t<T>& n, const Vec3& wi, const Vec3& wo) {
    using namespace shade_detail;
    require_unit(wi, "brdf_eval(wi)");
    require_unit(wo, "brdf_eval(wo)");

    const Vec3 h = normalized(wi + wo);
    T n_wi = dot_dir(n, wi);
    T n_wo = dot_dir(n, wo);
    T n_h = dot_dir(n, h);
    // wi.h == wo.h analytically; averaging keeps reciprocity exact in floats
    const double wo_h = 0.5 * (dot(wi, h) + dot(wo, h));

    T a = mat.roughness * mat.roughness;
    T a2 = a * a;
    T denom = n_h * n_h * (a2 - 1.0) + 1.0;
    T dist = a2 / (kPi * denom * denom);

    const T& s = mat.specular_albedo;
    T fresnel = s + (1.0 - s) * lift(fifth_power(1.0 - wo_h), s);

    T k = a * 0.5;
    T g1_i = n_wi / (n_wi * (1.0 - k) + k);
    T g1_o = n_wo / (n_wo * (1.0 - k) + k);

    T specular = dist * fresnel * (g1_i * g1_o) / (4.0 * (n_wi * n_wo));
    const double inv_pi = 1.0 / kPi;
    return {mat.diffuse.x * inv_pi + specular, mat.diffuse.y * inv_pi + specular,
            mat.diffuse.z * inv_pi + specular};
}

// Colocated point light at the camera center: incident and outgoing
// directions coincide, with inverse-square falloff.
template <typename T>
Vec3t<T> radiance_colocated(const Vec3& x, const Vec3t<T>& n, const Vec3& camera_center,
                            const Material<T>& mat, double intensity) {
    using namespace shade_detail;
    const Vec3 to_cam = camera_center - x;
    const double dist2 = dot(to_cam, to_cam);
    if (dist2 == 0.0) throw DegenerateGeometry("shading point coincides with the camera center");
    const Vec3 w = to_cam / std::sqrt(dist2);

    T cos_term = dot_dir(n, w);
    if (primal(cos_term) <= 0.0) {
        T zero = lift(0.0, cos_term);
        return {zero, zero, zero};
    }
    const double falloff = intensity / dist2;
    Vec3t<T> f = brdf_eval(mat, n, w, w);
    return {f.x * cos_term * falloff, f.y * cos_term * falloff, f.z * cos_term * falloff};
}

using SdfProbe = std::function<double(const Vec3&)>;

// Binary visibility via sphere tracing from x toward the light.
inline bool traced_visibility(const SdfProbe& sdf, const Vec3& x, const Vec3& light,
                              double eps = 1e-3) {
    const Vec3 delta = light - x;
    const double dist = norm(delta);
    const Vec3 dir = delta / dist;
    double t = 10.0 * eps;  // march off the surface first
    for (int i = 0; i < 256 && t < dist - 10.0 * eps; ++i) {
        const double d = sdf(x + dir * t);
        if (d < eps) return false;
        t += d;
    }
    return true;
}

// Single explicit point light; reduces to the colocated model when the
// light sits at the camera center.
template <typename T>
Vec3t<T> radiance_point_light(const Vec3& x, const Vec3t<T>& n, const Vec3& wo,
                              const LightSpec& light, const Material<T>& mat,
                              const SdfProbe* shadow = nullptr) {
    using namespace shade_detail;
    if (!light.position)
        throw SpecError("radiance_point_light requires an explicit light position");
    const Vec3 to_light = *light.position - x;
    const double dist2 = dot(to_light, to_light);
    if (dist2 == 0.0) throw DegenerateGeometry("shading point coincides with the light");
    const Vec3 wi = to_light / std::sqrt(dist2);

    T cos_term = dot_dir(n, wi);
    if (primal(cos_term) <= 0.0 || primal(dot_dir(n, wo)) <= 0.0 ||
        (shadow && !traced_visibility(*shadow, x, *light.position))) {
        T zero = lift(0.0, cos_term);
        return {zero, zero, zero};
    }
    const double falloff = light.intensity / dist2;
    Vec3t<T> f = brdf_eval(mat, n, wi, wo);
    return {f.x * cos_term * falloff, f.y * cos_term * falloff, f.z * cos_term * falloff};
}

template <typename T>
void edit_material(Material<T>& mat, const MaterialEdit& edit) {
    using namespace shade_detail;
    using std::min;
    using std::max;
    if (edit.remove_specular) mat.specular_albedo = lift(0.0, mat.specular_albedo);
    if (edit.scale_roughness) {
        T scaled = mat.roughness * *edit.scale_roughness;
        mat.roughness = min(max(scaled, lift(0.01, scaled)), lift(1.0, scaled));
    }
    if (edit.recolor) {
        mat.diffuse = {lift(edit.recolor->x, mat.specular_albedo),
                       lift(edit.recolor->y, mat.specular_albedo),
                       lift(edit.recolor->z, mat.specular_albedo)};
    }
}

}  // namespace srvol
