#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "srvol/tape.hpp"

using namespace srvol;
using namespace srvol::ad;

TEST_CASE("forward evaluation of simple graphs", "[tape]") {
    ParameterStore store;
    Tape tape(&store);

    SECTION("f(x)=x^2 at x=3") {
        Value x = tape.input(3.0);
        Value y = x * x;
        CHECK(value_of(y) == 9.0);
    }
    SECTION("f(x)=sin(x) at x=0") {
        Value x = tape.input(0.0);
        CHECK(value_of(sin(x)) == 0.0);
    }
    SECTION("re-forward after set_input") {
        Value x = tape.input(1.0);
        Value y = x * x + 1.0;
        double two = 2.0;
        tape.set_input(x, std::span<const double>(&two, 1));
        tape.forward();
        CHECK(value_of(y) == 5.0);
    }
}

TEST_CASE("backward on analytic examples", "[tape]") {
    ParameterStore store;
    Tape tape(&store);

    SECTION("d/dx x^2 = 6 at x=3") {
        Value x = tape.input(3.0);
        Value y = x * x;
        tape.backward(y, 1.0);
        CHECK(tape.adjoint_of(x)[0] == 6.0);
    }
    SECTION("f(x,y)=sin(x)+x*y at (0,2)") {
        Value x = tape.input(0.0);
        Value y = tape.input(2.0);
        Value f = sin(x) + x * y;
        tape.backward(f, 1.0);
        CHECK(tape.adjoint_of(x)[0] == 3.0);  // cos(0) + y
        CHECK(tape.adjoint_of(y)[0] == 0.0);  // x
    }
    SECTION("backward before any forward is a StateError") {
        Tape fresh(&store);
        Value dummy{&fresh, 0};
        CHECK_THROWS_AS(fresh.backward(dummy, 1.0), StateError);
    }
}

TEST_CASE("non-finite intermediates are reported with node index", "[tape]") {
    ParameterStore store;
    Tape tape(&store);
    Value x = tape.input(-1.0);
    CHECK_THROWS_AS(log(x), NonFiniteValue);
}

namespace {

// Loop-free reference evaluator for a fixed 3-layer MLP (tanh hidden),
// independent of the tape path it checks.
double reference_mlp(const std::vector<double>& p, double x0, double x1) {
    // layer 1: 2 -> 3, layer 2: 3 -> 1
    const double h0 = std::tanh(p[0] * x0 + p[1] * x1 + p[6]);
    const double h1 = std::tanh(p[2] * x0 + p[3] * x1 + p[7]);
    const double h2 = std::tanh(p[4] * x0 + p[5] * x1 + p[8]);
    return p[9] * h0 + p[10] * h1 + p[11] * h2 + p[12];
}

Value tape_mlp(Tape& tape, std::size_t w1, std::size_t b1, std::size_t w2, std::size_t b2, Value x) {
    Value h = tanh(tape.matvec(w1, 3, 2, x) + tape.param(b1));
    return tape.matvec(w2, 1, 3, h) + tape.param(b2);
}

}  // namespace

TEST_CASE("random MLP matches independent reference evaluator", "[tape]") {
    ParameterStore store;
    std::size_t w1 = store.add_segment("w1", 6);
    std::size_t b1 = store.add_segment("b1", 3);
    std::size_t w2 = store.add_segment("w2", 3);
    std::size_t b2 = store.add_segment("b2", 1);

    Rng rng(42);
    for (double& v : store.raw_values()) v = rng.uniform(-1.0, 1.0);

    std::vector<double> flat;
    for (double v : store.values(w1)) flat.push_back(v);
    for (double v : store.values(b1)) flat.push_back(v);
    for (double v : store.values(w2)) flat.push_back(v);
    for (double v : store.values(b2)) flat.push_back(v);
    // reference layout: w1 rows, biases, w2, bias
    std::vector<double> p = {flat[0], flat[1], flat[2], flat[3], flat[4], flat[5],
                             flat[6], flat[7], flat[8],
                             flat[9], flat[10], flat[11], flat[12]};

    for (int trial = 0; trial < 10; ++trial) {
        const double x0 = rng.uniform(-1.0, 1.0), x1 = rng.uniform(-1.0, 1.0);
        Tape tape(&store);
        const double in[2] = {x0, x1};
        Value x = tape.input(std::span<const double>(in, 2));
        Value y = tape_mlp(tape, w1, b1, w2, b2, x);
        const double expected = reference_mlp(p, x0, x1);
        CHECK(value_of(y) == Catch::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("MLP gradient matches central finite differences", "[tape]") {
    ParameterStore store;
    std::size_t w1 = store.add_segment("w1", 6);
    std::size_t b1 = store.add_segment("b1", 3);
    std::size_t w2 = store.add_segment("w2", 3);
    std::size_t b2 = store.add_segment("b2", 1);
    Rng rng(7);
    for (double& v : store.raw_values()) v = rng.uniform(-1.0, 1.0);

    Tape tape(&store);
    const double in[2] = {0.3, -0.4};
    Value x = tape.input(std::span<const double>(in, 2));
    Value y = tape_mlp(tape, w1, b1, w2, b2, x);
    // squash through extra nonlinearities to exercise more ops
    Value loss = softplus(y) + sigmoid(y) * exp(y * 0.1);
    CHECK(gradient_check(tape, loss, store, 1e-4) < 1e-4);
}

TEST_CASE("gradient_check on quadratic and linear functions", "[tape]") {
    ParameterStore store;
    std::size_t q = store.add_segment("q", 5);
    Rng rng(3);
    for (double& v : store.values(q)) v = rng.uniform(-1.0, 1.0);

    SECTION("quadratic in 5 parameters") {
        Tape tape(&store);
        Value p = tape.param(q);
        Value loss = dot(p, p);
        CHECK(gradient_check(tape, loss, store, 1e-5) < 1e-7);
    }
    SECTION("linear function is exact") {
        Tape tape(&store);
        Value p = tape.param(q);
        std::vector<double> c = {1.0, -2.0, 0.5, 3.0, -0.25};
        Value loss = dot(p, tape.constant(c));
        CHECK(gradient_check(tape, loss, store, 1e-3) < 1e-10);
    }
}

TEST_CASE("chain-rule consistency over random small graphs", "[tape][property]") {
    Rng rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        ParameterStore store;
        std::size_t seg = store.add_segment("p", 4);
        for (double& v : store.values(seg)) v = rng.uniform(0.2, 1.5);

        Tape tape(&store);
        Value p = tape.param(seg);
        std::vector<Value> pool;
        for (int i = 0; i < 4; ++i) pool.push_back(slice(p, i, 1));
        // random composition of primitives
        for (int step = 0; step < 8; ++step) {
            Value a = pool[rng.uniform_int(pool.size())];
            Value b = pool[rng.uniform_int(pool.size())];
            switch (rng.uniform_int(8)) {
                case 0: pool.push_back(a + b); break;
                case 1: pool.push_back(a * b); break;
                case 2: pool.push_back(a - 0.5 * b); break;
                case 3: pool.push_back(sin(a)); break;
                case 4: pool.push_back(tanh(a)); break;
                case 5: pool.push_back(softplus(a)); break;
                case 6: pool.push_back(sigmoid(a * b)); break;
                default: pool.push_back(exp(a * 0.3)); break;
            }
        }
        Value out = pool.back() + pool[pool.size() - 2];
        CHECK(gradient_check(tape, out, store, 1e-5) < 1e-4);
    }
}

TEST_CASE("linearity of adjoints", "[tape][property]") {
    ParameterStore store;
    std::size_t seg = store.add_segment("p", 3);
    Rng rng(5);
    for (double& v : store.values(seg)) v = rng.uniform(-1.0, 1.0);

    Tape tape(&store);
    Value p = tape.param(seg);
    Value out = concat(sin(p), tape.sum(p * p));  // length 4 output

    auto grads_for = [&](const std::vector<double>& seed) {
        store.zero_grads();
        tape.backward(out, std::span<const double>(seed.data(), seed.size()));
        return store.raw_grads();
    };

    const std::vector<double> s1 = {1.0, 0.0, -2.0, 0.5};
    const std::vector<double> s2 = {0.25, 1.5, 0.0, -1.0};
    const double a = 0.75, b = -1.25;
    std::vector<double> combo(4);
    for (int i = 0; i < 4; ++i) combo[i] = a * s1[i] + b * s2[i];

    auto g1 = grads_for(s1);
    auto g2 = grads_for(s2);
    auto gc = grads_for(combo);
    for (std::size_t i = 0; i < gc.size(); ++i)
        CHECK(gc[i] == Catch::Approx(a * g1[i] + b * g2[i]).margin(1e-12));
}

TEST_CASE("gradients are bitwise deterministic", "[tape][property]") {
    auto run = [] {
        ParameterStore store;
        std::size_t seg = store.add_segment("p", 16);
        Rng rng(99);
        for (double& v : store.values(seg)) v = rng.uniform(-1.0, 1.0);
        Tape tape(&store);
        Value p = tape.param(seg);
        Value loss = tape.sum(softplus(sin(p) * p) + sigmoid(p));
        tape.backward(loss, 1.0);
        return store.raw_grads();
    };
    auto g1 = run();
    auto g2 = run();
    REQUIRE(g1.size() == g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
