#include <catch2/catch_amalgamated.hpp>

#include "srvol/fields.hpp"

using namespace srvol;
using namespace srvol::ad;

TEST_CASE("positional encoding basics", "[fields]") {
    SECTION("origin: raw zero, sines zero, cosines one") {
        auto enc = positional_encode({0, 0, 0}, 6);
        REQUIRE(enc.size() == 3 + 6 * 6);
        for (int i = 0; i < 3; ++i) CHECK(enc[i] == 0.0);
        for (int k = 0; k < 6; ++k)
            for (int i = 0; i < 3; ++i) {
                CHECK(enc[3 + 6 * k + i] == 0.0);        // sin
                CHECK(enc[3 + 6 * k + 3 + i] == 1.0);    // cos
            }
    }
    SECTION("L=0 is the identity") {
        auto enc = positional_encode({0.2, -0.5, 1.0}, 0);
        REQUIRE(enc.size() == 3);
        CHECK(enc[0] == 0.2);
        CHECK(enc[1] == -0.5);
        CHECK(enc[2] == 1.0);
    }
    SECTION("x=(1,0,0), k=0 term") {
        auto enc = positional_encode({1, 0, 0}, 1);
        CHECK(enc[3] == Catch::Approx(std::sin(kPi)).margin(1e-12));
        CHECK(enc[6] == Catch::Approx(-1.0).margin(1e-15));
    }
    SECTION("length is 3+6L for all L") {
        for (int L = 0; L <= 12; ++L)
            CHECK(positional_encode({0.1, 0.2, 0.3}, L).size() == std::size_t(3 + 6 * L));
    }
}

TEST_CASE("mlp forward edge cases", "[fields]") {
    ParameterStore store;
    Rng rng(11);

    SECTION("all weights zero: output = activation(bias)") {
        MlpSpec spec{{8, 8}, -1, 2, OutputActivation::Sigmoid, 3, 3};
        Mlp mlp(spec, "m", store, rng);
        for (int l = 0; l < mlp.layer_count(); ++l)
            for (double& v : store.values(mlp.layer_weight_segment(l))) v = 0.0;
        auto bias = store.values(mlp.layer_bias_segment(mlp.layer_count() - 1));
        bias[0] = 0.0; bias[1] = 1.0; bias[2] = -1.0;
        Tape tape(&store);
        Value y = mlp.forward(tape, {0.3, 0.1, -0.7});
        auto out = tape.values_of(y);
        CHECK(out[0] == Catch::Approx(0.5));
        CHECK(out[1] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))));
        CHECK(out[2] == Catch::Approx(1.0 / (1.0 + std::exp(1.0))));
    }

    SECTION("encoded input length mismatch is a SpecError") {
        MlpSpec spec{{4}, -1, 0, OutputActivation::None, 3, 1};
        Mlp mlp(spec, "n", store, rng);
        Tape tape(&store);
        Value bad = tape.constant(std::vector<double>{1.0, 2.0});
        CHECK_THROWS_AS(mlp.forward_encoded(tape, bad), SpecError);
    }
}

namespace {

// Plain-loop reference for a skip MLP, independent of the tape.
double reference_skip_mlp(const ParameterStore& store, const Mlp& mlp, const Vec3& x) {
    const auto& spec = mlp.spec();
    std::vector<double> enc = positional_encode(x, spec.pe_frequencies);
    std::vector<double> h = enc;
    for (int l = 0; l + 1 < mlp.layer_count(); ++l) {
        if (l + 1 == spec.skip_layer) h.insert(h.end(), enc.begin(), enc.end());
        auto w = store.values(mlp.layer_weight_segment(l));
        auto b = store.values(mlp.layer_bias_segment(l));
        std::vector<double> next(b.size());
        for (std::size_t r = 0; r < b.size(); ++r) {
            double s = b[r];
            for (std::size_t c = 0; c < h.size(); ++c) s += w[r * h.size() + c] * h[c];
            next[r] = s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
        }
        h = next;
    }
    auto w = store.values(mlp.layer_weight_segment(mlp.layer_count() - 1));
    auto b = store.values(mlp.layer_bias_segment(mlp.layer_count() - 1));
    double s = b[0];
    for (std::size_t c = 0; c < h.size(); ++c) s += w[c] * h[c];
    return s;
}

}  // namespace

TEST_CASE("random skip-mlp matches reference and passes gradient check", "[fields]") {
    ParameterStore store;
    Rng rng(23);
    MlpSpec spec{{16, 16, 16}, 2, 4, OutputActivation::None, 3, 1};
    Mlp mlp(spec, "m", store, rng);

    for (int trial = 0; trial < 5; ++trial) {
        Vec3 x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Tape tape(&store);
        Value y = mlp.forward(tape, x);
        CHECK(value_of(y) ==
              Catch::Approx(reference_skip_mlp(store, mlp, x)).epsilon(1e-12));
    }

    Tape tape(&store);
    Value y = mlp.forward(tape, Vec3{0.3, -0.2, 0.5});
    CHECK(gradient_check(tape, y, store, 1e-5) < 1e-4);
}

TEST_CASE("sphere-initialized SDF field", "[fields]") {
    ParameterStore store;
    Rng rng(77);
    FieldSet fields(FieldConfig::desk_default(), store, rng);

    SECTION("value near -0.5 at origin, +0.5 at unit radius") {
        Tape tape(&store);
        auto at_origin = fields.sdf(tape, Vec3{0, 0, 0});
        CHECK(value_of(at_origin.value) == Catch::Approx(-0.5).margin(0.05));
        Tape tape2(&store);
        auto at_unit = fields.sdf(tape2, Vec3{1, 0, 0});
        CHECK(value_of(at_unit.value) == Catch::Approx(0.5).margin(0.05));
    }

    SECTION("zero level set within 0.05 of radius 0.5 along 26 probe directions") {
        int checked = 0;
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    Vec3 dir = normalized(Vec3{double(dx), double(dy), double(dz)});
                    // bisect d(t*dir)=0 on t in [0.1, 1.2]
                    double lo = 0.1, hi = 1.2;
                    auto eval = [&](double t) {
                        Tape tape(&store);
                        return value_of(fields.sdf_value(tape, dir * t));
                    };
                    REQUIRE(eval(lo) < 0.0);
                    REQUIRE(eval(hi) > 0.0);
                    for (int it = 0; it < 40; ++it) {
                        double mid = 0.5 * (lo + hi);
                        (eval(mid) < 0.0 ? lo : hi) = mid;
                    }
                    CHECK(std::abs(0.5 * (lo + hi) - 0.5) < 0.05);
                    ++checked;
                }
        CHECK(checked == 26);
    }
}

TEST_CASE("sdf gradient matches finite differences", "[fields][property]") {
    ParameterStore store;
    Rng rng(31);
    FieldConfig cfg = FieldConfig::desk_default();
    cfg.sdf.hidden_widths = {16, 16};
    cfg.sdf.skip_layer = 2;
    FieldSet fields(cfg, store, rng);

    Rng points(5);
    const double h = 1e-5;
    for (int i = 0; i < 100; ++i) {
        Vec3 x = {points.uniform(-1, 1), points.uniform(-1, 1), points.uniform(-1, 1)};
        Tape tape(&store);
        auto s = fields.sdf(tape, x);
        const double g[3] = {value_of(s.gradient.x), value_of(s.gradient.y),
                             value_of(s.gradient.z)};
        for (int j = 0; j < 3; ++j) {
            Vec3 xp = x, xm = x;
            (&xp.x)[j] += h;
            (&xm.x)[j] -= h;
            Tape tp(&store), tm(&store);
            const double fd =
                (value_of(fields.sdf_value(tp, xp)) - value_of(fields.sdf_value(tm, xm))) /
                (2 * h);
            const double denom = std::max(1e-8, std::abs(fd) + std::abs(g[j]));
            CHECK(std::abs(fd - g[j]) / denom < 1e-4);
        }
    }
}

TEST_CASE("sdf spatial gradient participates in parameter gradients", "[fields]") {
    ParameterStore store;
    Rng rng(13);
    FieldConfig cfg = FieldConfig::desk_default();
    cfg.sdf.hidden_widths = {8, 8};
    cfg.sdf.skip_layer = 2;
    cfg.diffuse.hidden_widths = {6};
    cfg.specular.hidden_widths = {6};
    FieldSet fields(cfg, store, rng);

    // eikonal-style scalar; target 0.5 keeps the gradient away from zero
    // (after sphere init |grad d| is already ~1)
    Tape tape(&store);
    auto s = fields.sdf(tape, Vec3{0.4, -0.1, 0.2});
    Value g2 = s.gradient.x * s.gradient.x + s.gradient.y * s.gradient.y +
               s.gradient.z * s.gradient.z;
    Value loss = (sqrt(g2) - 0.5) * (sqrt(g2) - 0.5);
    CHECK(gradient_check(tape, loss, store, 1e-4) < 1e-3);
}

TEST_CASE("brdf field outputs respect their ranges", "[fields][property]") {
    ParameterStore store;
    Rng rng(41);
    FieldConfig cfg = FieldConfig::desk_default();
    cfg.diffuse.hidden_widths = {12, 12};
    cfg.specular.hidden_widths = {12};
    FieldSet fields(cfg, store, rng);

    SECTION("zero weights, zero biases give midpoint outputs") {
        const Mlp& d = fields.diffuse_mlp();
        const Mlp& sp = fields.specular_mlp();
        for (int l = 0; l < d.layer_count(); ++l)
            for (double& v : store.values(d.layer_weight_segment(l))) v = 0.0;
        for (int l = 0; l < sp.layer_count(); ++l)
            for (double& v : store.values(sp.layer_weight_segment(l))) v = 0.0;
        Tape tape(&store);
        auto b = fields.brdf(tape, Vec3{0.1, 0.2, 0.3});
        CHECK(value_of(b.diffuse.x) == Catch::Approx(0.5));
        CHECK(value_of(b.diffuse.y) == Catch::Approx(0.5));
        CHECK(value_of(b.diffuse.z) == Catch::Approx(0.5));
        CHECK(value_of(b.specular_albedo) == Catch::Approx(0.5));
        CHECK(value_of(b.roughness) == Catch::Approx(0.505));
    }

    SECTION("ranges hold over random inputs") {
        Rng points(8);
        for (int i = 0; i < 10000; ++i) {
            Vec3 x = {points.uniform(-1.5, 1.5), points.uniform(-1.5, 1.5),
                      points.uniform(-1.5, 1.5)};
            Tape tape(&store);
            auto b = fields.brdf(tape, x);
            for (double c : {value_of(b.diffuse.x), value_of(b.diffuse.y), value_of(b.diffuse.z)}) {
                CHECK(c >= 0.0);
                CHECK(c <= 1.0);
            }
            CHECK(value_of(b.specular_albedo) >= 0.0);
            CHECK(value_of(b.specular_albedo) <= 1.0);
            CHECK(value_of(b.roughness) >= 0.01);
            CHECK(value_of(b.roughness) <= 1.0);
        }
    }
}

TEST_CASE("brdf field is locally Lipschitz (finite measured constant)", "[fields]") {
    ParameterStore store;
    Rng rng(55);
    FieldConfig cfg = FieldConfig::desk_default();
    cfg.diffuse.hidden_widths = {12, 12};
    cfg.specular.hidden_widths = {12};
    FieldSet fields(cfg, store, rng);

    Rng points(17);
    double max_ratio = 0.0;
    for (int i = 0; i < 200; ++i) {
        Vec3 x = {points.uniform(-0.9, 0.9), points.uniform(-0.9, 0.9), points.uniform(-0.9, 0.9)};
        Vec3 delta = Vec3{points.normal(), points.normal(), points.normal()} * 1e-4;
        Tape ta(&store), tb(&store);
        auto a = fields.brdf(ta, x);
        auto b = fields.brdf(tb, x + delta);
        const double diff = std::abs(value_of(a.diffuse.x) - value_of(b.diffuse.x)) +
                            std::abs(value_of(a.specular_albedo) - value_of(b.specular_albedo)) +
                            std::abs(value_of(a.roughness) - value_of(b.roughness));
        max_ratio = std::max(max_ratio, diff / norm(delta));
    }
    INFO("measured local Lipschitz constant K = " << max_ratio);
    CHECK(std::isfinite(max_ratio));
}
