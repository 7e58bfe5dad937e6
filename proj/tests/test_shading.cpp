#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "srvol/common.hpp"
#include "srvol/shading.hpp"
#include "srvol/tape.hpp"

using namespace srvol;

namespace {

Material<double> make_mat(Vec3 diffuse, double s, double r) {
    return Material<double>{diffuse, s, r};
}

// cosine-weighted hemisphere direction around +z
Vec3 cosine_sample(Rng& rng) {
    const double u1 = rng.uniform(), u2 = rng.uniform();
    const double rad = std::sqrt(u1);
    const double phi = 2.0 * kPi * u2;
    return {rad * std::cos(phi), rad * std::sin(phi), std::sqrt(std::max(0.0, 1.0 - u1))};
}

}  // namespace

TEST_CASE("brdf: zero specular albedo is pure Lambertian") {
    Rng rng(11);
    const Vec3 n{0, 0, 1};
    for (int trial = 0; trial < 50; ++trial) {
        auto mat = make_mat({rng.uniform(), rng.uniform(), rng.uniform()}, 0.0,
                            0.01 + 0.99 * rng.uniform());
        Vec3 wi = normalized(cosine_sample(rng));
        Vec3 wo = normalized(cosine_sample(rng));
        // retro-reflective configuration: w.h = 1 so the Schlick term is
        // exactly s = 0 and the lobe vanishes
        Vec3 f_reflect = brdf_eval(mat, n, wi, wi);
        CHECK(f_reflect.x == Catch::Approx(mat.diffuse.x / kPi).margin(1e-15));
        CHECK(f_reflect.y == Catch::Approx(mat.diffuse.y / kPi).margin(1e-15));
        CHECK(f_reflect.z == Catch::Approx(mat.diffuse.z / kPi).margin(1e-15));
        // generic directions: only the tiny grazing Fresnel leak remains
        Vec3 f = brdf_eval(mat, n, wi, wo);
        CHECK(f.x >= mat.diffuse.x / kPi - 1e-15);
        const double leak = f.x - mat.diffuse.x / kPi;
        CHECK(leak == Catch::Approx(f.y - mat.diffuse.y / kPi).margin(1e-12));
    }
}

TEST_CASE("brdf: colocated mirror configuration hits 1/(4pi)") {
    const Vec3 n{0, 0, 1};
    auto mat = make_mat({0, 0, 0}, 1.0, 1.0);
    Vec3 f = brdf_eval(mat, n, n, n);
    // D(n.h=1, a=1) = 1/pi, F(wo.h=1) = s = 1, G1(1) = 1
    CHECK(f.x == Catch::Approx(1.0 / (4.0 * kPi)).epsilon(1e-12));
    CHECK(f.x == Catch::Approx(0.079577).margin(1e-6));
}

TEST_CASE("brdf: non-unit directions rejected") {
    auto mat = make_mat({0.5, 0.5, 0.5}, 0.5, 0.5);
    const Vec3 n{0, 0, 1};
    CHECK_THROWS_AS(brdf_eval(mat, n, Vec3{0, 0, 2}, n), SpecError);
    CHECK_THROWS_AS(brdf_eval(mat, n, n, Vec3{0.5, 0, 0.5}), SpecError);
}

TEST_CASE("brdf: reciprocity is exact") {
    Rng rng(23);
    const Vec3 n{0, 0, 1};
    for (int trial = 0; trial < 200; ++trial) {
        auto mat = make_mat({rng.uniform(), rng.uniform(), rng.uniform()}, rng.uniform(),
                            0.01 + 0.99 * rng.uniform());
        Vec3 wi = normalized(cosine_sample(rng));
        Vec3 wo = normalized(cosine_sample(rng));
        Vec3 f1 = brdf_eval(mat, n, wi, wo);
        Vec3 f2 = brdf_eval(mat, n, wo, wi);
        CHECK(f1.x == f2.x);
        CHECK(f1.y == f2.y);
        CHECK(f1.z == f2.z);
        CHECK(f1.x >= 0.0);
        CHECK(f1.y >= 0.0);
        CHECK(f1.z >= 0.0);
    }
}

TEST_CASE("brdf: hemisphere energy stays near-bounded") {
    // Monte-Carlo quadrature oracle. The diffuse lobe integrates to exactly
    // diffuse (cosine integral of rho/pi); the specular lobe is estimated
    // with GGX half-vector importance sampling, which keeps the estimator
    // variance low even for near-mirror roughness.
    Rng rng(37);
    const Vec3 n{0, 0, 1};
    const int n_samples = 100000;
    for (int m = 0; m < 100; ++m) {
        const double s = rng.uniform();
        // energy-conserving material draw: diffuse cedes what specular takes
        auto mat = make_mat({(1.0 - s) * rng.uniform(), (1.0 - s) * rng.uniform(),
                             (1.0 - s) * rng.uniform()},
                            s, 0.01 + 0.99 * rng.uniform());
        Vec3 wo = normalized(cosine_sample(rng));
        while (wo.z < 0.35) wo = normalized(cosine_sample(rng));
        const double a = mat.roughness * mat.roughness;
        const double a2 = a * a;

        double spec_acc = 0.0;
        for (int k = 0; k < n_samples; ++k) {
            // h ~ D(h) (n.h): cos_th = sqrt((1-u)/(1+(a^2-1)u))
            const double u1 = rng.uniform(), u2 = rng.uniform();
            const double ct = std::sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1));
            const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
            const double phi = 2.0 * kPi * u2;
            const Vec3 h{st * std::cos(phi), st * std::sin(phi), ct};
            const double wo_h = dot(wo, h);
            if (wo_h <= 0.0) continue;
            const Vec3 wi = normalized(h * (2.0 * wo_h) - wo);
            if (wi.z <= 1e-9) continue;

            Vec3 f = brdf_eval(mat, n, wi, wo);
            const double f_spec = f.x - mat.diffuse.x / kPi;  // achromatic lobe
            const double denom = ct * ct * (a2 - 1.0) + 1.0;
            const double dist = a2 / (kPi * denom * denom);
            const double pdf = dist * ct / (4.0 * wo_h);
            if (pdf > 1e-12) spec_acc += f_spec * wi.z / pdf;
        }
        const double spec_energy = spec_acc / n_samples;
        CHECK(mat.diffuse.x + spec_energy <= 1.05);
        CHECK(mat.diffuse.y + spec_energy <= 1.05);
        CHECK(mat.diffuse.z + spec_energy <= 1.05);
        CHECK(spec_energy >= 0.0);
    }
}

TEST_CASE("radiance_colocated: Lambertian value and falloff") {
    const Vec3 n{0, 0, 1};
    auto mat = make_mat({0.6, 0.6, 0.6}, 0.0, 0.5);

    Vec3 L1 = radiance_colocated(Vec3{0, 0, 0}, n, Vec3{0, 0, 1}, mat, 1.0);
    CHECK(L1.x == Catch::Approx(0.6 / kPi).epsilon(1e-12));
    CHECK(L1.x == Catch::Approx(0.190986).margin(1e-6));
    CHECK(L1.x == L1.y);
    CHECK(L1.y == L1.z);

    // inverse square: doubling distance quarters the value exactly
    Vec3 L2 = radiance_colocated(Vec3{0, 0, 0}, n, Vec3{0, 0, 2}, mat, 1.0);
    CHECK(L2.x == L1.x * 0.25);

    // grazing: w.n = 0
    Vec3 Lg = radiance_colocated(Vec3{0, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}, mat, 1.0);
    CHECK(Lg.x == 0.0);
    CHECK(Lg.y == 0.0);
    CHECK(Lg.z == 0.0);

    // back-facing normal also zero
    Vec3 Lb = radiance_colocated(Vec3{0, 0, 0}, Vec3{0, 0, -1}, Vec3{0, 0, 1}, mat, 1.0);
    CHECK(Lb.x == 0.0);

    CHECK_THROWS_AS(radiance_colocated(Vec3{1, 2, 3}, n, Vec3{1, 2, 3}, mat, 1.0),
                    DegenerateGeometry);
}

TEST_CASE("radiance_point_light: colocated light reproduces Eq.6 bitwise") {
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 x{rng.normal(), rng.normal(), rng.normal()};
        const Vec3 cam = x + Vec3{rng.normal(), rng.normal(), rng.normal() + 2.0};
        Vec3 n = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
        auto mat = make_mat({rng.uniform(), rng.uniform(), rng.uniform()}, rng.uniform(),
                            0.01 + 0.99 * rng.uniform());
        const double intensity = 0.5 + rng.uniform();

        const Vec3 wo = normalized(cam - x);
        LightSpec light{cam, intensity};
        Vec3 a = radiance_colocated(x, n, cam, mat, intensity);
        Vec3 b = radiance_point_light(x, n, wo, light, mat);
        CHECK(a.x == b.x);
        CHECK(a.y == b.y);
        CHECK(a.z == b.z);
    }
}

TEST_CASE("radiance_point_light: light behind surface and shadowing") {
    const Vec3 n{0, 0, 1};
    auto mat = make_mat({0.7, 0.2, 0.2}, 0.3, 0.4);
    LightSpec behind{Vec3{0, 0, -2}, 1.0};
    Vec3 L = radiance_point_light(Vec3{0, 0, 0}, n, n, behind, mat);
    CHECK(L.x == 0.0);

    LightSpec colocated{std::nullopt, 1.0};
    CHECK_THROWS_AS(radiance_point_light(Vec3{0, 0, 0}, n, n, colocated, mat), SpecError);
    CHECK_THROWS_AS((LightSpec{Vec3{0, 0, 1}, -1.0}.validate()), SpecError);

    // blocker sphere of radius 0.3 at the origin occludes a light on the far
    // side of it from a point on the near side
    SdfProbe blocker = [](const Vec3& p) { return norm(p) - 0.3; };
    LightSpec far_light{Vec3{0, 0, 2}, 1.0};
    Vec3 shadowed = radiance_point_light(Vec3{0, 0, -1}, Vec3{0, 0, 1}, Vec3{0, 0, 1},
                                         far_light, mat, &blocker);
    CHECK(shadowed.x == 0.0);
    // move the light to the same side: unoccluded
    LightSpec near_light{Vec3{0, 1, -2}, 1.0};
    Vec3 open = radiance_point_light(Vec3{0, 0, -1}, Vec3{0, 0, -1}, Vec3{0, 0, -1}, near_light,
                                     mat, &blocker);
    CHECK(open.x > 0.0);
}

TEST_CASE("edit_material: remove, clamp, recolor") {
    auto mat = make_mat({0.4, 0.5, 0.6}, 0.8, 0.5);

    auto lamb = mat;
    edit_material(lamb, MaterialEdit{.remove_specular = true});
    CHECK(lamb.specular_albedo == 0.0);
    const Vec3 n{0, 0, 1};
    Vec3 f = brdf_eval(lamb, n, n, n);
    CHECK(f.x == Catch::Approx(0.4 / kPi).epsilon(1e-12));
    CHECK(f.y == Catch::Approx(0.5 / kPi).epsilon(1e-12));
    CHECK(f.z == Catch::Approx(0.6 / kPi).epsilon(1e-12));

    auto rough = mat;
    edit_material(rough, MaterialEdit{.scale_roughness = 10.0});
    CHECK(rough.roughness == 1.0);
    edit_material(rough, MaterialEdit{.scale_roughness = 1e-6});
    CHECK(rough.roughness == 0.01);

    auto red = mat;
    edit_material(red, MaterialEdit{.recolor = Vec3{1, 0, 0}});
    CHECK(red.diffuse.x == 1.0);
    CHECK(red.diffuse.y == 0.0);
    CHECK(red.diffuse.z == 0.0);
    edit_material(red, MaterialEdit{.remove_specular = true});
    Vec3 fr = brdf_eval(red, n, n, n);
    CHECK(fr.y == 0.0);
    CHECK(fr.z == 0.0);
}

TEST_CASE("radiance gradients w.r.t. material parameters match finite differences") {
    using namespace ad;
    Rng rng(67);
    for (int trial = 0; trial < 5; ++trial) {
        ParameterStore store;
        auto seg = store.add_segment("mat", 5);
        auto v = store.values(seg);
        v[0] = 0.2 + 0.6 * rng.uniform();  // diffuse rgb
        v[1] = 0.2 + 0.6 * rng.uniform();
        v[2] = 0.2 + 0.6 * rng.uniform();
        v[3] = 0.2 + 0.6 * rng.uniform();  // specular albedo
        v[4] = 0.2 + 0.7 * rng.uniform();  // roughness

        Tape tape(&store);
        Material<Value> mat{
            {tape.param(seg, 0, 1), tape.param(seg, 1, 1), tape.param(seg, 2, 1)},
            tape.param(seg, 3, 1),
            tape.param(seg, 4, 1)};
        const Vec3 x{0, 0, 0};
        const Vec3 cam = normalized(Vec3{rng.normal(), rng.normal(), std::abs(rng.normal()) + 0.5}) * 2.0;
        Vec3v n = make_vec3(tape, Vec3{0, 0, 1});
        Vec3t<Value> L = radiance_colocated(x, n, cam, mat, 1.0);
        Value total = L.x + L.y + L.z;
        const double err = gradient_check(tape, total, store, 1e-5);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("radiance gradient w.r.t. the normal matches finite differences") {
    using namespace ad;
    ParameterStore store;
    auto seg = store.add_segment("n", 3);
    auto v = store.values(seg);
    v[0] = 0.1;
    v[1] = -0.2;
    v[2] = 0.95;

    Tape tape(&store);
    Value nv = tape.param(seg);
    Vec3v n{slice(nv, 0, 1), slice(nv, 1, 1), slice(nv, 2, 1)};
    Material<Value> mat{{tape.constant(0.5), tape.constant(0.3), tape.constant(0.2)},
                        tape.constant(0.4), tape.constant(0.35)};
    Vec3t<Value> L = radiance_colocated(Vec3{0, 0, 0}, n, Vec3{0.2, 0.1, 1.5}, mat, 1.0);
    Value total = L.x + L.y + L.z;
    CHECK(gradient_check(tape, total, store, 1e-5) < 1e-4);
}
