#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "srvol/common.hpp"
#include "srvol/fields.hpp"
#include "srvol/tape.hpp"
#include "srvol/volume.hpp"

using namespace srvol;

namespace {

double sphere_sdf(const Vec3& p) { return norm(p) - 0.5; }

// uniform grid over [a, b] with m points, endpoints included
std::vector<double> linspace(double a, double b, int m) {
    std::vector<double> ts(m);
    for (int i = 0; i < m; ++i) ts[i] = a + (b - a) * i / (m - 1);
    return ts;
}

}  // namespace

TEST_CASE("laplace_cdf: closed forms and monotonicity") {
    CHECK(laplace_cdf(0.0, 0.1) == 0.5);
    CHECK(laplace_cdf(0.0, 3.0) == 0.5);
    CHECK(laplace_cdf(-0.1, 0.1) == Catch::Approx(0.5 * std::exp(-1.0)).epsilon(1e-12));
    CHECK(laplace_cdf(-0.1, 0.1) == Catch::Approx(0.183940).margin(1e-6));
    CHECK(laplace_cdf(0.1, 0.1) == Catch::Approx(1.0 - 0.5 * std::exp(-1.0)).epsilon(1e-12));
    CHECK(laplace_cdf(0.1, 0.1) == Catch::Approx(0.816060).margin(1e-6));
    CHECK_THROWS_AS(laplace_cdf(0.0, 0.0), SpecError);
    CHECK_THROWS_AS(laplace_cdf(0.0, -1.0), SpecError);

    Rng rng(3);
    double prev = 0.0;
    for (double s = -5.0; s <= 5.0; s += 0.05) {
        const double v = laplace_cdf(s, 0.3);
        CHECK(v > prev);
        CHECK(v < 1.0);
        prev = v;
    }

    // symmetric branch seam is continuous and exact: Psi(-s) = 1 - Psi(s)
    for (int i = 0; i < 100; ++i) {
        const double s = rng.normal();
        const double beta = 0.05 + rng.uniform();
        CHECK(laplace_cdf(-s, beta) == Catch::Approx(1.0 - laplace_cdf(s, beta)).margin(1e-15));
    }
}

TEST_CASE("laplace_cdf: tape version matches and differentiates") {
    using namespace ad;
    ParameterStore store;
    auto seg = store.add_segment("p", 2);
    store.values(seg)[0] = -0.07;  // s
    store.values(seg)[1] = std::log(0.1);  // beta_raw

    Tape tape(&store);
    Value s = tape.param(seg, 0, 1);
    Value beta = exp(tape.param(seg, 1, 1));
    Value psi = laplace_cdf(s, beta);
    // exp(log(0.1)) is one ulp off 0.1, so compare with a tight tolerance
    CHECK(value_of(psi) == Catch::Approx(laplace_cdf(-0.07, 0.1)).epsilon(1e-14));
    CHECK(gradient_check(tape, psi, store, 1e-6) < 1e-6);

    // positive branch
    store.values(seg)[0] = 0.12;
    Tape tape2(&store);
    Value psi2 = laplace_cdf(tape2.param(seg, 0, 1), exp(tape2.param(seg, 1, 1)));
    CHECK(value_of(psi2) == Catch::Approx(laplace_cdf(0.12, 0.1)).epsilon(1e-14));
    CHECK(gradient_check(tape2, psi2, store, 1e-6) < 1e-6);
}

TEST_CASE("density: sdf-to-sigma transform") {
    const double alpha = 10.0, beta = 0.1;
    CHECK(density_sigma(0.0, alpha, beta) == alpha * 0.5);
    CHECK(density_sigma(10.0 * beta, alpha, beta) ==
          Catch::Approx(alpha * 0.5 * std::exp(-10.0)).epsilon(1e-12));
    CHECK(density_sigma(10.0 * beta, alpha, beta) ==
          Catch::Approx(2.27e-5 * alpha).epsilon(1e-2));

    // beta -> 0 limit on a sphere: sigma -> alpha * indicator(inside)
    const double beta_small = 1e-4;
    const Vec3 inside{0, 0, 0.4}, outside{0, 0, 0.6};
    CHECK(density_sigma(sphere_sdf(inside), alpha, beta_small) ==
          Catch::Approx(alpha).epsilon(1e-9));
    CHECK(density_sigma(sphere_sdf(outside), alpha, beta_small) ==
          Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("ray validation and sphere intersection") {
    Ray bad{{0, 0, -2}, {0, 0, 2}, 0.0, 4.0};
    CHECK_THROWS_AS(bad.validate(), SpecError);
    Ray reversed{{0, 0, -2}, {0, 0, 1}, 2.0, 1.0};
    CHECK_THROWS_AS(reversed.validate(), SpecError);
    Ray ok{{0, 0, -2}, {0, 0, 1}, 1.0, 3.0};
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.at(1.5).z == -0.5);

    double t0 = 0, t1 = 0;
    REQUIRE(intersect_sphere({0, 0, -2}, {0, 0, 1}, 1.0, t0, t1));
    CHECK(t0 == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(t1 == Catch::Approx(3.0).epsilon(1e-12));
    CHECK_FALSE(intersect_sphere({0, 2, -2}, {0, 0, 1}, 1.0, t0, t1));
    // sphere behind origin
    CHECK_FALSE(intersect_sphere({0, 0, 2}, {0, 0, 1}, 1.0, t0, t1));
    // origin inside: clamp t0 to 0
    REQUIRE(intersect_sphere({0, 0, 0}, {0, 0, 1}, 1.0, t0, t1));
    CHECK(t0 == 0.0);
    CHECK(t1 == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sample_ray: stratification, determinism, errors") {
    Ray ray{{0, 0, -2}, {0, 0, 1}, 0.0, 1.0};
    Rng rng = Rng::substream(7, 0, 0, 0);
    auto ts = sample_ray(ray, 4, SampleStrategy::Stratified, rng);
    REQUIRE(ts.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(ts[i] >= 0.25 * i);
        CHECK(ts[i] < 0.25 * (i + 1));
    }

    Rng rng_a = Rng::substream(7, 1, 2, 3);
    Rng rng_b = Rng::substream(7, 1, 2, 3);
    auto ta = sample_ray(ray, 16, SampleStrategy::Stratified, rng_a);
    auto tb = sample_ray(ray, 16, SampleStrategy::Stratified, rng_b);
    CHECK(ta == tb);

    Rng r2(1);
    CHECK_THROWS_AS(sample_ray(ray, 1, SampleStrategy::Stratified, r2), SpecError);
    CHECK_THROWS_AS(sample_ray(ray, 8, SampleStrategy::TwoPassImportance, r2), SpecError);
}

TEST_CASE("sample_ray: two-pass importance concentrates near the surface") {
    const double beta = 0.01, alpha = 1.0 / beta;
    DensityProbe probe = [&](const Vec3& p) { return density_sigma(sphere_sdf(p), alpha, beta); };

    // ray through the sphere center; surface crossing at t = 1.5
    Ray ray{{0, 0, -2}, {0, 0, 1}, 1.3, 1.7};
    int total = 0, near_surface = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng = Rng::substream(11, trial, 0, 0);
        auto ts = sample_ray(ray, 64, SampleStrategy::TwoPassImportance, rng, probe);
        REQUIRE(ts.size() == 64);
        for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] > ts[i - 1]);
        for (double t : ts) {
            ++total;
            if (std::abs(t - 1.5) <= 5.0 * beta) ++near_surface;
        }
    }
    CHECK(double(near_surface) / total >= 0.6);
}

TEST_CASE("compute_weights: vacuum, analytic opacity, monotonicity") {
    auto ts = linspace(0.0, 1.0, 8);
    RaySamples vac = compute_weights(ts, std::vector<double>(8, 0.0));
    for (double w : vac.weight) CHECK(w == 0.0);
    CHECK(vac.weight_sum == 0.0);

    // constant sigma = 1 on [0,1]: W -> 1 - exp(-1)
    auto ts512 = linspace(0.0, 1.0, 512);
    RaySamples rs = compute_weights(ts512, std::vector<double>(512, 1.0));
    CHECK(rs.weight_sum == Catch::Approx(1.0 - std::exp(-1.0)).margin(1e-3));
    CHECK(rs.weight_sum <= 1.0 + 1e-9);

    // doubling sigma never decreases W
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 16 + int(rng.uniform_int(48));
        std::vector<double> t(m), sig(m);
        double cur = rng.uniform();
        for (int i = 0; i < m; ++i) {
            t[i] = cur;
            cur += 0.01 + 0.1 * rng.uniform();
            sig[i] = 0.1 + 1.4 * rng.uniform();
        }
        std::vector<double> sig2 = sig;
        for (double& s : sig2) s *= 2.0;
        RaySamples w1 = compute_weights(t, sig);
        RaySamples w2 = compute_weights(t, sig2);
        CHECK(w2.weight_sum >= w1.weight_sum);
        CHECK(w1.weight_sum >= 0.0);
        CHECK(w1.weight_sum <= 1.0 + 1e-9);
        for (double w : w1.weight) CHECK(w >= 0.0);
    }

    CHECK_THROWS_AS(compute_weights({0.0}, {1.0}), SpecError);
    CHECK_THROWS_AS(compute_weights({0.0, 1.0}, {1.0}), SpecError);
    CHECK_THROWS_AS(compute_weights({0.0, 0.0, 1.0}, {1.0, 1.0, 1.0}), SpecError);
}

TEST_CASE("compute_weights: transmittance non-increasing") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 32;
        std::vector<double> t(m), sig(m);
        for (int i = 0; i < m; ++i) {
            t[i] = 0.1 * i + 0.05 * rng.uniform();
            sig[i] = 2.0 * rng.uniform();
        }
        for (int i = 1; i < m; ++i) t[i] = std::max(t[i], t[i - 1] + 1e-6);
        RaySamples rs = compute_weights(t, sig);
        // reconstruct T_i = weight_i / (1 - exp(-sigma_i delta_i)), check decay
        double prev_T = 1.0;
        for (int i = 0; i < m; ++i) {
            const double delta = i + 1 < m ? t[i + 1] - t[i] : t[m - 1] - t[m - 2];
            const double opacity = 1.0 - std::exp(-sig[i] * delta);
            if (opacity == 0.0) continue;
            const double T = rs.weight[i] / opacity;
            CHECK(T <= prev_T + 1e-12);
            prev_T = T;
        }
    }
}

TEST_CASE("compute_weights: O(1/m) convergence on constant density") {
    const double sigma0 = 1.0;
    const double exact = 1.0 - std::exp(-1.0);
    double errs[3];
    const int ms[3] = {8, 64, 512};
    for (int k = 0; k < 3; ++k) {
        auto ts = linspace(0.0, 1.0, ms[k]);
        RaySamples rs = compute_weights(ts, std::vector<double>(ms[k], sigma0));
        errs[k] = std::abs(rs.weight_sum - exact);
    }
    // successive 8x refinements shrink the error ~8x
    CHECK(errs[0] / errs[1] > 4.0);
    CHECK(errs[0] / errs[1] < 16.0);
    CHECK(errs[1] / errs[2] > 4.0);
    CHECK(errs[1] / errs[2] < 16.0);
}

TEST_CASE("compute_weights: tape version matches double version") {
    using namespace ad;
    Rng rng(41);
    ParameterStore store;
    Tape tape(&store);
    const int m = 24;
    std::vector<double> ts(m), sig(m);
    std::vector<Value> sigv(m);
    double cur = 0.5;
    for (int i = 0; i < m; ++i) {
        ts[i] = cur;
        cur += 0.02 + 0.05 * rng.uniform();
        sig[i] = 3.0 * rng.uniform();
        sigv[i] = tape.constant(sig[i]);
    }
    RaySamples plain = compute_weights(ts, sig);
    RaySamplesT taped = compute_weights(tape, ts, sigv);
    REQUIRE(taped.weight.size() == plain.weight.size());
    for (int i = 0; i < m; ++i)
        CHECK(value_of(taped.weight[i]) == Catch::Approx(plain.weight[i]).epsilon(1e-12));
    CHECK(value_of(taped.weight_sum) == Catch::Approx(plain.weight_sum).epsilon(1e-12));
}

TEST_CASE("weight gradients w.r.t. alpha, beta, and sdf parameters") {
    using namespace ad;
    Rng rng(43);
    ParameterStore store;

    // tiny sdf mlp so the finite-difference sweep stays cheap
    MlpSpec spec;
    spec.hidden_widths = {8, 8};
    spec.pe_frequencies = 2;
    Mlp sdf(spec, "sdf", store, rng);
    auto alpha_seg = store.add_segment("alpha_raw", 1);
    auto beta_seg = store.add_segment("beta_raw", 1);
    store.values(alpha_seg)[0] = std::log(10.0);
    store.values(beta_seg)[0] = std::log(0.1);

    Tape tape(&store);
    Value alpha = exp(tape.param(alpha_seg));
    Value beta = exp(tape.param(beta_seg));

    Ray ray{{0, 0, -2}, {0, 0, 1}, 1.0, 3.0};
    Rng srng = Rng::substream(43, 1, 2, 3);
    auto ts = sample_ray(ray, 8, SampleStrategy::Stratified, srng);
    std::vector<Value> sigmas;
    for (double t : ts) {
        Value d = sdf.forward(tape, ray.at(t));
        sigmas.push_back(density_sigma(d, alpha, beta));
    }
    RaySamplesT rst = compute_weights(tape, ts, sigmas);
    CHECK(gradient_check(tape, rst.weight_sum, store, 1e-5) < 1e-3);
}

TEST_CASE("accumulate_radiance: linearity and trivial cases") {
    using namespace ad;
    ParameterStore store;
    Tape tape(&store);

    std::vector<Value> weights;
    std::vector<Vec3v> radiance;
    for (int i = 0; i < 5; ++i) {
        weights.push_back(tape.constant(0.0));
        radiance.push_back(make_vec3(tape, Vec3{1.0, 2.0, 3.0}));
    }
    Vec3v black = accumulate_radiance(tape, weights, radiance);
    CHECK(value_of(black.x) == 0.0);
    CHECK(value_of(black.y) == 0.0);
    CHECK(value_of(black.z) == 0.0);

    // constant radiance L0: output = W * L0
    Rng rng(47);
    std::vector<Value> w2;
    double wsum = 0.0;
    for (int i = 0; i < 5; ++i) {
        const double wi = 0.1 * rng.uniform();
        wsum += wi;
        w2.push_back(tape.constant(wi));
    }
    const Vec3 L0{0.25, 0.5, 0.75};
    std::vector<Vec3v> r2(5, make_vec3(tape, L0));
    Vec3v out = accumulate_radiance(tape, w2, r2);
    CHECK(value_of(out.x) == Catch::Approx(wsum * L0.x).epsilon(1e-12));
    CHECK(value_of(out.y) == Catch::Approx(wsum * L0.y).epsilon(1e-12));
    CHECK(value_of(out.z) == Catch::Approx(wsum * L0.z).epsilon(1e-12));

    std::vector<Value> short_w(2, tape.constant(0.0));
    CHECK_THROWS_AS(accumulate_radiance(tape, short_w, r2), SpecError);
}

TEST_CASE("expected_normal_depth: point mass, sphere, vacuum") {
    // single nonzero weight returns that sample's normal and depth
    RaySamples rs;
    rs.t = {1.0, 1.5, 2.0};
    rs.weight = {0.0, 0.8, 0.0};
    rs.weight_sum = 0.8;
    std::vector<Vec3> normals = {{1, 0, 0}, {0, 0, -1}, {0, 1, 0}};
    NormalDepth nd = expected_normal_depth(rs, normals);
    CHECK_FALSE(nd.background);
    CHECK(nd.depth == Catch::Approx(1.5).epsilon(1e-12));
    CHECK(nd.normal.z == Catch::Approx(-1.0).epsilon(1e-12));

    // sharp sphere, center ray from (0,0,-2): depth ~ 1.5, normal ~ (0,0,-1)
    const double beta = 1e-3, alpha = 1.0 / beta;
    Ray ray{{0, 0, -2}, {0, 0, 1}, 1.0, 3.0};
    auto ts = linspace(ray.t_near, ray.t_far, 512);
    std::vector<double> sig(ts.size());
    std::vector<Vec3> ns(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Vec3 x = ray.at(ts[i]);
        sig[i] = density_sigma(sphere_sdf(x), alpha, beta);
        const double len = norm(x);
        ns[i] = len > 1e-12 ? x / len : Vec3{0, 0, 1};
    }
    RaySamples srs = compute_weights(ts, sig);
    NormalDepth snd = expected_normal_depth(srs, ns);
    CHECK_FALSE(snd.background);
    CHECK(snd.depth == Catch::Approx(1.5).margin(0.01));
    CHECK(snd.normal.z == Catch::Approx(-1.0).margin(0.01));
    CHECK(std::abs(snd.normal.x) < 0.01);

    // vacuum ray
    RaySamples vac = compute_weights({0.0, 1.0}, {0.0, 0.0});
    NormalDepth vnd = expected_normal_depth(vac, {{0, 0, 1}, {0, 0, 1}});
    CHECK(vnd.background);

    CHECK_THROWS_AS(expected_normal_depth(vac, {{0, 0, 1}}), SpecError);
}
