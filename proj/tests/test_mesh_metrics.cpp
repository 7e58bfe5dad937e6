#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "srvol/datagen.hpp"
#include "srvol/mesh.hpp"
#include "srvol/metrics.hpp"

using namespace srvol;
using Catch::Approx;
namespace fs = std::filesystem;

static SdfProbe sphere_probe(double radius) {
    return [radius](const Vec3& p) { return norm(p) - radius; };
}

TEST_CASE("isosurface of a sphere: vertices on the surface, normals radial") {
    TriangleMesh mesh = extract_isosurface(sphere_probe(0.5), 48);
    REQUIRE(mesh.vertices.size() > 500);
    REQUIRE(mesh.faces.size() > 500);
    REQUIRE(mesh.normals.size() == mesh.vertices.size());

    double max_radial_err = 0.0;
    double max_normal_err = 0.0;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        max_radial_err = std::max(max_radial_err, std::abs(norm(v) - 0.5));
        // analytic normal is the radial direction
        const Vec3 radial = normalized(v);
        max_normal_err = std::max(max_normal_err, norm(mesh.normals[i] - radial));
    }
    // grid cell is 2/47 ~ 0.0426; linear interpolation of an exact SDF puts
    // vertices much closer than a cell
    CHECK(max_radial_err < 0.002);
    CHECK(max_normal_err < 1e-4);

    // consistent outward winding
    CHECK(face_orientation_agreement(mesh) == 1.0);
}

TEST_CASE("isosurface is watertight for a closed surface") {
    TriangleMesh mesh = extract_isosurface(sphere_probe(0.4), 24);
    // every edge must be shared by exactly two faces
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& f : mesh.faces)
        for (int i = 0; i < 3; ++i) {
            int a = f[i], b = f[(i + 1) % 3];
            if (a > b) std::swap(a, b);
            edge_count[{a, b}]++;
        }
    for (const auto& [edge, count] : edge_count) CHECK(count == 2);
    // Euler characteristic of a sphere: V - E + F = 2
    CHECK(int(mesh.vertices.size()) - int(edge_count.size()) + int(mesh.faces.size()) == 2);
}

TEST_CASE("isosurface orientation flips with the SDF sign") {
    SdfProbe inverted = [](const Vec3& p) { return 0.5 - norm(p); };
    TriangleMesh mesh = extract_isosurface(inverted, 24);
    REQUIRE(!mesh.faces.empty());
    // normals now point inward (toward the origin)...
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        CHECK(dot(mesh.normals[i], mesh.vertices[i]) < 0.0);
    // ...and the winding still agrees with them
    CHECK(face_orientation_agreement(mesh) == 1.0);
}

TEST_CASE("isosurface validation") {
    CHECK_THROWS_AS(extract_isosurface(SdfProbe{}, 16), SpecError);
    CHECK_THROWS_AS(extract_isosurface(sphere_probe(0.5), 1), SpecError);
    CHECK_THROWS_AS(extract_isosurface(sphere_probe(0.5), 16, 1.0, -1.0), SpecError);
    // empty field produces an empty mesh
    CHECK(extract_isosurface([](const Vec3&) { return 1.0; }, 8).faces.empty());
}

TEST_CASE("obj roundtrip preserves the mesh") {
    TriangleMesh mesh = extract_isosurface(sphere_probe(0.5), 12);
    fs::path path = fs::temp_directory_path() / "srvol_mesh_test.obj";
    write_obj(path, mesh);
    TriangleMesh back = read_obj(path);
    REQUIRE(back.vertices.size() == mesh.vertices.size());
    REQUIRE(back.normals.size() == mesh.normals.size());
    REQUIRE(back.faces.size() == mesh.faces.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        CHECK(norm(back.vertices[i] - mesh.vertices[i]) < 1e-7);
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) CHECK(back.faces[i] == mesh.faces[i]);
    fs::remove(path);

    CHECK_THROWS_AS(read_obj("/nonexistent/mesh.obj"), IoError);
}

TEST_CASE("psnr: closed forms and cap") {
    Image a(8, 8, 3, 0.5);
    CHECK(psnr(a, a) == kPsnrCap);

    Image b = a;
    for (double& v : b.data) v += 0.1;  // mse = 0.01 -> 20 dB
    CHECK(psnr(a, b) == Approx(20.0).margin(1e-9));

    for (double& v : b.data) v = a.data[0] + 0.01;  // mse = 1e-4 -> 40 dB
    CHECK(psnr(a, b) == Approx(40.0).margin(1e-9));

    CHECK_THROWS_AS(psnr(a, Image(4, 4, 3)), SpecError);
}

TEST_CASE("ssim: identity, symmetry, and degradation ordering") {
    // structured test image
    Image a(32, 32, 3);
    Rng rng(99);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c)
                a.at(x, y, c) = 0.5 + 0.3 * std::sin(0.5 * x + 0.3 * y + c) +
                                0.05 * rng.uniform(-1.0, 1.0);

    CHECK(ssim(a, a) == Approx(1.0).margin(1e-12));

    Image mild = a, harsh = a;
    Rng noise(7);
    for (double& v : mild.data) v += 0.02 * noise.normal();
    for (double& v : harsh.data) v += 0.2 * noise.normal();
    const double s_mild = ssim(a, mild);
    const double s_harsh = ssim(a, harsh);
    CHECK(s_mild < 1.0);
    CHECK(s_harsh < s_mild);
    CHECK(ssim(a, mild) == Approx(ssim(mild, a)).margin(1e-12));

    // constant-offset images: luminance term only
    Image flat1(16, 16, 1, 0.4), flat2(16, 16, 1, 0.6);
    const double c1 = 1e-4;
    const double expect = (2 * 0.4 * 0.6 + c1) / (0.4 * 0.4 + 0.6 * 0.6 + c1);
    CHECK(ssim(flat1, flat2) == Approx(expect).margin(1e-9));

    CHECK_THROWS_AS(ssim(a, Image(4, 4, 3)), SpecError);
}

TEST_CASE("normal MAE: exact rotations") {
    Image a(4, 4, 3), b(4, 4, 3);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            a.at(x, y, 2) = 1.0;  // +z everywhere
            // rotate 30 degrees toward +x
            b.at(x, y, 0) = std::sin(kPi / 6.0);
            b.at(x, y, 2) = std::cos(kPi / 6.0);
        }
    CHECK(normal_mae_degrees(a, a) == Approx(0.0).margin(1e-12));
    CHECK(normal_mae_degrees(a, b) == Approx(30.0).margin(1e-9));

    // scaling either map does not change the angle
    Image b2 = b;
    for (double& v : b2.data) v *= 2.5;
    CHECK(normal_mae_degrees(a, b2) == Approx(30.0).margin(1e-9));

    // mask selects a subset
    Image mask(4, 4, 1);
    mask.at(0, 0, 0) = 1.0;
    Image mixed = a;
    mixed.at(1, 1, 0) = 1.0;  // 45 degrees off, but masked out
    mixed.at(1, 1, 2) = 1.0;
    CHECK(normal_mae_degrees(a, mixed, &mask) == Approx(0.0).margin(1e-12));

    Image zero_mask(4, 4, 1);
    CHECK_THROWS_AS(normal_mae_degrees(a, b, &zero_mask), SpecError);
}

TEST_CASE("normal MAE against the analytic sphere ground truth") {
    // meshed sphere normals vs closed-form radial normals, encoded as images
    TriangleMesh mesh = extract_isosurface(sphere_probe(0.5), 32);
    const int n = int(std::min<std::size_t>(mesh.vertices.size(), 64));
    Image got(n, 1, 3), want(n, 1, 3);
    for (int i = 0; i < n; ++i) {
        const Vec3 g = mesh.normals[i];
        const Vec3 w = normalized(mesh.vertices[i]);
        got.at(i, 0, 0) = g.x; got.at(i, 0, 1) = g.y; got.at(i, 0, 2) = g.z;
        want.at(i, 0, 0) = w.x; want.at(i, 0, 1) = w.y; want.at(i, 0, 2) = w.z;
    }
    CHECK(normal_mae_degrees(got, want) < 0.01);
}
