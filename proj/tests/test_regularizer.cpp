#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crashcert/bounds.hpp"
#include "crashcert/gradients.hpp"
#include "crashcert/regularizer.hpp"
#include "fixtures.hpp"

using namespace crashcert;
using namespace fixtures;

namespace {

Matrix random_matrix(std::uint64_t seed, Index r, Index c) {
    RngStream rng(seed, 12);
    Matrix w(r, c);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    return w;
}

Dataset small_batch(std::uint64_t seed, Index in, Index out, std::size_t n) {
    Dataset d;
    for (std::size_t i = 0; i < n; ++i)
        d.push_back({random_vector(seed * 100 + i, in), 0.3 * random_vector(seed * 100 + i + 50, out)});
    return d;
}

} // namespace

TEST_CASE("continuity metrics on simple matrices") {
    const Matrix c = Matrix::Constant(5, 6, 0.7);
    CHECK(continuity_c1(c) == 0.0);
    CHECK(continuity_c2(c) == 0.0);
    CHECK(continuity_c3(c, 1.5) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(continuity_c1(Matrix::Ones(1, 4)) == 0.0);
    CHECK(continuity_c2(Matrix::Ones(4, 1)) == 0.0);

    Matrix alt(4, 3);
    for (Index i = 0; i < 4; ++i) alt.row(i).setConstant(i % 2 == 0 ? 1.0 : -1.0);
    CHECK(continuity_c1(alt) == 2.0 * 3 * 3);
    // no other +-1 matrix of this shape exceeds the alternating one
    for (std::uint64_t s = 0; s < 50; ++s) {
        Matrix r = random_matrix(s, 4, 3).unaryExpr([](double v) { return v > 0 ? 1.0 : -1.0; });
        CHECK(continuity_c1(r) <= continuity_c1(alt));
    }

    const Matrix w = random_matrix(1, 5, 4);
    CHECK(continuity_c2(w) == doctest::Approx(4.0 / 5.0 * continuity_c1(w.transpose())).epsilon(1e-14));

    Matrix rows_dup(10, 4), cols_dup(5, 8);
    for (Index i = 0; i < 5; ++i) rows_dup.row(2 * i) = rows_dup.row(2 * i + 1) = w.row(i);
    // column duplication as done by duplicate_neurons: outgoing weights split in half
    for (Index j = 0; j < 4; ++j) cols_dup.col(2 * j) = cols_dup.col(2 * j + 1) = w.col(j) / 2.0;
    CHECK(continuity_c1(rows_dup) <= continuity_c1(w) + 1e-12);
    CHECK(continuity_c2(cols_dup) <= continuity_c2(w) + 1e-12);

    Matrix appended(6, 4);
    appended.topRows(5) = w;
    appended.row(5) = w.row(4);
    CHECK(continuity_c1(appended) == continuity_c1(w));
}

TEST_CASE("metrics vanish only on constant directions") {
    Matrix rows_equal(4, 5), cols_equal(4, 5);
    const Matrix w = random_matrix(3, 4, 5);
    for (Index i = 0; i < 4; ++i) rows_equal.row(i) = w.row(0);
    for (Index j = 0; j < 5; ++j) cols_equal.col(j) = w.col(0);
    CHECK(continuity_c1(rows_equal) == 0.0);
    CHECK(continuity_c1(cols_equal) > 0.0);
    CHECK(continuity_c2(cols_equal) == 0.0);
    CHECK(continuity_c2(rows_equal) > 0.0);
    CHECK(continuity_c3(cols_equal, 1.0) <= 1e-12);
    CHECK(continuity_c3(rows_equal, 1.0) > 1e-3);
}

TEST_CASE("c3 against direct convolution") {
    const Index n = 41, centre = 20;
    const double sigma = 2.0;
    Matrix spike = Matrix::Zero(1, n);
    spike(0, centre) = 1.0;
    // kernel centre weight, computed independently: radius round(3 sigma) = 6
    double norm = 0.0;
    for (int d = -6; d <= 6; ++d) norm += std::exp(-0.5 * d * d / (sigma * sigma));
    const double k0 = 1.0 / norm;
    CHECK(continuity_c3(spike, sigma) == doctest::Approx(2.0 * (1.0 - k0) / n).epsilon(1e-12));

    Matrix ramp(1, 50);
    for (Index j = 0; j < 50; ++j) ramp(0, j) = 0.1 * static_cast<double>(j);
    const Matrix k = gaussian_smoothing_operator(50, 1.0);
    const Vector smoothed = k * ramp.row(0).transpose();
    for (Index j = 3; j < 47; ++j) CHECK(std::abs(smoothed[j] - ramp(0, j)) <= 1e-12);
    CHECK(continuity_c3(ramp, 1.0) < 0.01);
    CHECK((k.rowwise().sum() - Vector::Ones(50)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("reg_terms on the averaging network") {
    for (Index n : {2, 5, 8}) {
        const Network avg = averaging_net(n);
        // target 0.5 with output 1 makes dL/dy = 1 for the clamped mse
        Dataset batch{{Vector::Ones(n), Vector::Constant(1, 0.5)}};
        const RegTerms t = reg_terms(avg, batch, {}, {});
        REQUIRE(t.crash_layers.size() == 1);
        CHECK(t.crash_layers[0].r1 == doctest::Approx(1.0 / static_cast<double>(n)).epsilon(1e-14));
        CHECK(t.crash_layers[0].r2 == 1.0);
    }
    Matrix w = random_matrix(4, 1, 3).replicate(4, 1);
    const Network dup({Layer{w, Vector::Zero(4), Activation::sigmoid}, Layer{Matrix::Ones(1, 4), Vector::Zero(1), Activation::linear}});
    CHECK(reg_terms(dup, {}, {}, {}).weight_layers[0].c1 == 0.0);
}

TEST_CASE("R2 is the inverse squared q-factor and clamps") {
    Network net = random_net(6, {3, 5, 1});
    const RegTerms t = reg_terms(net, {}, {}, {});
    const Vector s = net.layer(2).weights.cwiseAbs().colwise().sum().transpose();
    const double q = s.minCoeff() / s.maxCoeff();
    CHECK(t.crash_layers[1].r2 == doctest::Approx(1.0 / (q * q)).epsilon(1e-14));
    net.layer(2).weights(0, 3) = 0.0;
    CHECK(reg_terms(net, {}, {}, {}).crash_layers[1].r2 == kBalanceCap);
}

TEST_CASE("R1 times p equals the per-layer b3 variance") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Network net = random_net(seed, {3, 6, 4, 2});
        Dataset one = small_batch(seed, 3, 2, 1);
        const RegTerms t = reg_terms(net, one, {}, {});
        const double p = 0.01;
        const BoundReport b = bound_taylor(net, one[0].x, CrashModel{{p, p, p, 0.0}},
                                           Head::of_loss(loss_spec_for(one[0], {})));
        for (std::size_t l = 0; l < 3; ++l)
            CHECK(std::abs(t.crash_layers[l].r1 * p - b.layers[l].variance) <=
                  1e-10 * std::max(b.layers[l].variance, 1e-300));
    }
}

TEST_CASE("regularized loss with zero weights is the plain loss") {
    const Network net = random_net(8, {2, 5, 1});
    const Dataset batch = small_batch(8, 2, 1, 6);
    const RegularizedLoss r = regularized_loss(net, batch, {}, {});
    double plain = 0.0;
    std::vector<Matrix> dw{Matrix::Zero(5, 2), Matrix::Zero(1, 5)};
    for (const auto& ex : batch) {
        const auto g = backprop(net, ex.x, Head::of_loss(loss_spec_for(ex, {})));
        plain += g.value;
        for (std::size_t k = 0; k < 2; ++k) dw[k] += g.d_weights[k] / 6.0;
    }
    CHECK(r.value == doctest::Approx(plain / 6.0).epsilon(1e-15));
    CHECK(r.penalty == 0.0);
    for (std::size_t k = 0; k < 2; ++k) CHECK((r.d_weights[k] - dw[k]).norm() <= 1e-15);
}

TEST_CASE("regularized loss gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Network net = random_net(seed, {3, 6, 5, 1});
        const Dataset batch = small_batch(seed, 3, 1, 4);
        RegWeights w;
        w.lambda = 0.5;
        w.mu = 0.01;
        w.psi_deriv = 0.01;
        w.psi_smooth = 0.02;
        w.nu = 0.01;
        const RegularizedLoss r = regularized_loss(net, batch, {}, w);
        Network probe = net;
        double diff2 = 0.0, ref2 = 0.0;
        for (Index k = 1; k <= net.depth(); ++k) {
            auto& layer = probe.layer(k);
            for (Index i = 0; i < layer.weights.size(); ++i) {
                double& theta = layer.weights.data()[i];
                const double saved = theta, h = 1e-6 * (1 + std::abs(saved));
                theta = saved + h;
                const double up = regularized_loss(probe, batch, {}, w, false).value;
                theta = saved - h;
                const double down = regularized_loss(probe, batch, {}, w, false).value;
                theta = saved;
                const double fd = (up - down) / (2 * h);
                const double an = r.d_weights[static_cast<std::size_t>(k - 1)].data()[i];
                diff2 += (fd - an) * (fd - an);
                ref2 += fd * fd;
            }
        }
        CHECK(std::sqrt(diff2 / ref2) <= 1e-4);
    }
}

TEST_CASE("lambda increases the regularized loss") {
    const Network net = random_net(10, {2, 5, 1});
    const Dataset batch = small_batch(10, 2, 1, 5);
    double prev = regularized_loss(net, batch, {}, {}, false).value;
    for (double lambda : {0.1, 0.2, 0.4}) {
        RegWeights w;
        w.lambda = lambda;
        const double v = regularized_loss(net, batch, {}, w, false).value;
        CHECK(v > prev);
        prev = v;
    }
    RegWeights bad;
    bad.mu = -1;
    CHECK_THROWS_AS(regularized_loss(net, batch, {}, bad), DomainError);
}
