#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"

using namespace crashcert;
using namespace fixtures;

namespace {

CrashMask crash_one(const Network& net, Index layer, Index i) {
    CrashMask m = no_crash(net);
    m[static_cast<std::size_t>(layer)][i] = true;
    return m;
}

} // namespace

TEST_CASE("forward examples") {
    Network avg2 = averaging_net(2);
    CHECK(forward(avg2, Vector::Ones(2)).output()[0] == 1.0);

    Network two({Layer{Matrix::Zero(1, 1), Vector::Zero(1), Activation::sigmoid},
                 Layer{Matrix::Identity(1, 1), Vector::Zero(1), Activation::linear}});
    CHECK(forward(two, Vector::Constant(1, 3.7)).y[1][0] == 0.5);

    const Network net = random_net(3, {3, 5, 4, 2});
    const Vector x = random_vector(4, 3);
    const auto tr = forward(net, x);
    Vector y = x;
    for (const auto& layer : net.layers()) {
        Network single({Layer{layer.weights, layer.bias, Activation::linear}});
        y = forward(single, y).output().unaryExpr([&](double v) { return activate(layer.activation, v); });
    }
    CHECK((tr.output() - y).norm() == 0.0);
    CHECK_THROWS_AS(forward(net, Vector::Zero(2)), DimensionError);
}

TEST_CASE("network invariants") {
    CHECK_THROWS_AS(Network({Layer{Matrix::Ones(2, 2), Vector::Zero(2), Activation::sigmoid}}), DomainError);
    CHECK_THROWS_AS(Network({Layer{Matrix::Ones(2, 2), Vector::Zero(3), Activation::linear}}), DimensionError);
    CHECK_THROWS_AS(Network({Layer{Matrix::Ones(2, 2), Vector::Zero(2), Activation::sigmoid},
                             Layer{Matrix::Ones(1, 3), Vector::Zero(1), Activation::linear}}),
                    DimensionError);
}

TEST_CASE("forward_crashed examples") {
    const Network net = random_net(5, {3, 4, 2});
    const Vector x = random_vector(6, 3);
    CHECK(forward_crashed(net, x, no_crash(net)).output() == forward(net, x).output());

    const Network first = first_input_net(3);
    Vector x1(3);
    x1 << 2.0, 1.0, 1.0;
    CHECK(forward_crashed(first, x1, crash_one(first, 0, 0)).output()[0] == 0.0);
    CHECK(delta_output(first, x1, crash_one(first, 0, 0))[0] == -2.0);

    const Network avg = averaging_net(4);
    CHECK(forward_crashed(avg, Vector::Ones(4), crash_one(avg, 0, 2)).output()[0] == 0.75);
    CHECK(delta_head(avg, Vector::Ones(4), crash_one(avg, 0, 2), Head::output(0)) == -0.25);
    CHECK(delta_head(avg, Vector::Ones(4), no_crash(avg), Head::output(0)) == 0.0);

    CrashMask bad = no_crash(net);
    bad[1] = MaskLayer::Constant(7, false);
    CHECK_THROWS_AS(forward_crashed(net, x, bad), DimensionError);
}

TEST_CASE("crash equals zeroed outgoing weights") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Network net = random_net(seed, {4, 6, 5, 3});
        const Vector x = random_vector(seed + 100, 4);
        RngStream rng(seed, 77);
        CrashMask m = no_crash(net);
        for (std::size_t l = 0; l + 1 < m.size(); ++l)
            for (Index i = 0; i < m[l].size(); ++i) m[l][i] = rng.bernoulli(0.3);
        const Vector a = forward_crashed(net, x, m).output();
        const Vector b = forward(zero_outgoing_weights(net, m), x).output();
        CHECK((a - b).norm() <= 1e-14);
    }
}

TEST_CASE("activations are 1-Lipschitz") {
    RngStream rng(11, 0);
    for (int k = 0; k < 1000; ++k) {
        const double a = 10 * rng.normal(), b = 10 * rng.normal();
        for (auto act : {Activation::sigmoid, Activation::relu, Activation::linear})
            CHECK(std::abs(activate(act, a) - activate(act, b)) <= std::abs(a - b) + 1e-15);
    }
}

TEST_CASE("loss layer") {
    Vector t(2);
    t << 0.3, -0.2;
    LossSpec mse{LossKind::bounded_mse, t, 0, 1.0};
    CHECK(loss(t, mse) == 0.0);
    CHECK(loss(Vector::Constant(2, 1e6), mse) == 1.0);

    LossSpec margin{LossKind::bounded_margin, {}, 0, 0.5};
    Vector right(3), wrong(3);
    right << 1.0, 0.2, 0.1;
    wrong << 0.1, 0.9, 0.0;
    CHECK(loss(right, margin) < 0.0);
    CHECK(loss(wrong, margin) > 0.0);
    margin.class_index = 3;
    CHECK_THROWS_AS(loss(right, margin), DimensionError);

    RngStream rng(5, 5);
    for (int k = 0; k < 500; ++k) {
        Vector o(3);
        for (Index i = 0; i < 3; ++i) o[i] = 100 * rng.normal();
        LossSpec m{LossKind::bounded_margin, {}, static_cast<Index>(rng.below(3)), 1.0};
        LossSpec s{LossKind::bounded_mse, Vector::Zero(3), 0, 1.0};
        CHECK(std::abs(loss(o, m)) <= 1.0);
        CHECK(std::abs(loss(o, s)) <= 1.0);
    }
}

TEST_CASE("margin scale keeps the loss unclamped") {
    const Network net = random_net(9, {2, 8, 3}, Activation::sigmoid, 4.0);
    Dataset data;
    for (std::uint64_t i = 0; i < 20; ++i) data.push_back({random_vector(i, 2, -3, 3), Vector::Unit(3, i % 3)});
    const double scale = margin_scale_for(net, data);
    for (const auto& ex : data) {
        const double v = loss(forward(net, ex.x).output(), loss_spec_for(ex, {LossKind::bounded_margin, scale}));
        CHECK(std::abs(v) < 1.0);
    }
}

TEST_CASE("duplicate_neurons preserves the function") {
    const Network net = random_net(21, {3, 5, 4, 2});
    const Vector x = random_vector(22, 3);
    for (Index l = 0; l < net.depth(); ++l) {
        const Network dup = duplicate_neurons(net, l, 3);
        CHECK(dup.width(l) == 3 * net.width(l));
        const Vector in = l == 0 ? duplicate_input(x, 3) : x;
        CHECK((forward(dup, in).output() - forward(net, x).output()).norm() <= 1e-13);
    }
}
