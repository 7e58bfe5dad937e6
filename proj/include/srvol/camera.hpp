// Pinhole camera: intrinsics in pixels, rigid world-from-camera transform,
// ray generation through continuous pixel coordinates and its inverse.
#pragma once

#include <array>
#include <cmath>

#include "srvol/common.hpp"
#include "srvol/volume.hpp"

namespace srvol {

struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    std::array<Vec3, 3> rotation{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};  // columns: camera axes in world space
    Vec3 center{0, 0, 0};  // camera origin in world space
    int width = 0, height = 0;

    void validate() const {
        if (fx <= 0.0 || fy <= 0.0) throw SpecError("camera focal lengths must be positive");
        if (width <= 0 || height <= 0) throw SpecError("camera resolution must be positive");
        const Vec3& r0 = rotation[0];
        const Vec3& r1 = rotation[1];
        const Vec3& r2 = rotation[2];
        const double tol = 1e-10;
        if (std::abs(dot(r0, r0) - 1.0) > tol || std::abs(dot(r1, r1) - 1.0) > tol ||
            std::abs(dot(r2, r2) - 1.0) > tol || std::abs(dot(r0, r1)) > tol ||
            std::abs(dot(r0, r2)) > tol || std::abs(dot(r1, r2)) > tol)
            throw SpecError("camera rotation is not orthonormal");
        if (dot(cross(r0, r1), r2) < 0.0)
            throw SpecError("camera rotation is not right-handed");
    }

    // world direction of the camera-frame vector v
    Vec3 to_world(const Vec3& v) const {
        return rotation[0] * v.x + rotation[1] * v.y + rotation[2] * v.z;
    }
    // camera-frame coordinates of the world vector v
    Vec3 to_camera(const Vec3& v) const {
        return {dot(rotation[0], v), dot(rotation[1], v), dot(rotation[2], v)};
    }

    Vec3 optical_axis() const { return rotation[2]; }
};

// Camera at `eye` looking at `target`, +z forward, +y down (image-style).
inline Camera make_lookat_camera(const Vec3& eye, const Vec3& target, double fx, double fy,
                                 int width, int height, const Vec3& up_hint = {0, 0, 1}) {
    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.center = eye;
    Vec3 forward = normalized(target - eye);
    Vec3 hint = up_hint;
    if (std::abs(dot(forward, normalized(hint))) > 0.999) hint = Vec3{0, 1, 0};
    Vec3 right = normalized(cross(forward, hint));
    Vec3 down = cross(forward, right);
    cam.rotation = {right, down, forward};
    cam.validate();
    return cam;
}

// Ray through the continuous pixel coordinate p; p may lie outside the image
// (jittered PSF samples). In silhouette mode the t-range is the intersection
// with the unit sphere; a miss is reported via the return flag. Otherwise the
// range is [near, far_plane].
inline bool pixel_ray(const Camera& cam, const Vec2& p, bool clip_to_unit_sphere, double far_plane,
                      Ray& out) {
    const Vec3 dir_cam{(p.x - cam.cx) / cam.fx, (p.y - cam.cy) / cam.fy, 1.0};
    out.origin = cam.center;
    out.direction = normalized(cam.to_world(dir_cam));
    if (clip_to_unit_sphere) {
        double t0 = 0, t1 = 0;
        if (!intersect_sphere(out.origin, out.direction, 1.0, t0, t1)) return false;
        out.t_near = std::max(t0, 1e-4);
        out.t_far = t1;
        return out.t_near < out.t_far;
    }
    out.t_near = 1e-4;
    out.t_far = far_plane;
    return true;
}

// Inverse of pixel_ray's direction mapping: world point -> pixel coords.
inline Vec2 project_point(const Camera& cam, const Vec3& x) {
    const Vec3 v = cam.to_camera(x - cam.center);
    if (v.z <= 0.0) throw DegenerateGeometry("point projects behind the camera");
    return {cam.cx + cam.fx * v.x / v.z, cam.cy + cam.fy * v.y / v.z};
}

}  // namespace srvol
