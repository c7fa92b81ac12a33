#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crashcert/guarantees.hpp"
#include "fixtures.hpp"

using namespace crashcert;
using namespace fixtures;

TEST_CASE("q_factor examples") {
    CHECK(q_factor(Matrix::Ones(3, 4)) == 1.0);
    Matrix w(3, 2);
    w << 1, 0, 1, -1, 2, 2;
    CHECK(q_factor(w) == 0.25);
    Matrix z(2, 2);
    z << 0, 0, 1, 1;
    CHECK(q_factor(z) == 0.0);
    CHECK_THROWS_AS(q_factor(Matrix::Zero(2, 2)), DomainError);
}

TEST_CASE("q_factor invariances") {
    RngStream rng(2, 2);
    Matrix w(5, 4);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    Matrix perm = w;
    perm.row(0).swap(perm.row(3));
    CHECK(q_factor(perm) == doctest::Approx(q_factor(w)).epsilon(1e-15));
    CHECK(q_factor(Matrix(3.5 * w)) == doctest::Approx(q_factor(w)).epsilon(1e-14));
}

TEST_CASE("perturbation tail delta0") {
    const long double kl = 0.1L * std::log(0.1L / 0.01L) + 0.9L * std::log(0.9L / 0.99L);
    const double ref = static_cast<double>(std::exp(-100.0L * kl));
    CHECK(perturbation_tail_delta0(100, 1.0, 0.1, 0.01) == doctest::Approx(ref).epsilon(1e-10));
    CHECK(perturbation_tail_delta0(100, 1.0, 0.1, 0.01) == doctest::Approx(5.3e-7).epsilon(0.01));
    CHECK(perturbation_tail_delta0(100, 1.0, 0.0100001, 0.01) > 0.999999);
    const double one = perturbation_tail_delta0(40, 0.5, 0.2, 0.05);
    CHECK(perturbation_tail_delta0(80, 0.5, 0.2, 0.05) == doctest::Approx(one * one).epsilon(1e-12));
    CHECK_THROWS_AS(perturbation_tail_delta0(10, 1.0, 0.01, 0.01), DomainError);
    CHECK_THROWS_AS(perturbation_tail_delta0(10, 1.0, 0.005, 0.01), DomainError);
}

TEST_CASE("perturbation tail holds for the binomial case") {
    for (auto [n, p, alpha] : {std::tuple{50, 0.01, 0.1}, std::tuple{20, 0.05, 0.25}}) {
        const std::size_t trials = 200000;
        std::size_t hits = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            RngStream s(31, t);
            int k = 0;
            for (int i = 0; i < n; ++i) k += s.bernoulli(p) ? 1 : 0;
            hits += static_cast<double>(k) >= alpha * n ? 1 : 0;
        }
        CHECK(static_cast<double>(hits) / trials <= perturbation_tail_delta0(n, 1.0, alpha, p));
    }
}

TEST_CASE("chebyshev certificate") {
    const auto c = chebyshev_certificate(0.0, 0.01, 0.5);
    CHECK(c.delta == doctest::Approx(0.04).epsilon(1e-14));
    CHECK(c.t == 0.5);
    CHECK(c.method == CertMethod::chebyshev);
    CHECK(chebyshev_certificate(0.1, 0.0, 0.5).delta == 0.0);
    CHECK(chebyshev_certificate(0.1, 0.0, 0.5, 1e-3).delta == 1e-3);
    CHECK(chebyshev_certificate(0.0, 100.0, 0.5).delta == 1.0);
    CHECK_THROWS_AS(chebyshev_certificate(0.5, 0.01, 0.5), InfeasibleCertificate);

    // averaging net read as a loss increase of +p; epsilon = 2p gives t = p and delta = 1/(np)
    const double p = 0.05, n = 40;
    const Network avg = averaging_net(40);
    const auto b = bound_taylor(avg, Vector::Ones(40), CrashModel{{p, 0.0}}, Head::output(0));
    const auto cert = chebyshev_certificate(-b.mean, *b.variance, 2 * p);
    CHECK(cert.t == doctest::Approx(p));
    CHECK(cert.delta == doctest::Approx(1.0 / (n * p)).epsilon(1e-12));
}

TEST_CASE("chebyshev fed exact moments is never violated") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Network net = random_net(seed, {3, 4, 3, 1});
        const Vector x = random_vector(seed, 3);
        const CrashModel c{{0.1, 0.1, 0.1, 0.0}};
        const auto e = exact_moments(net, x, c, Head::output(0));
        for (double k : {1.5, 3.0}) {
            const double eps = e.mean + k * std::sqrt(e.variance);
            const auto cert = chebyshev_certificate(e.mean, e.variance, eps);
            const auto mc = monte_carlo_moments(net, x, c, Head::output(0), {20000, seed, 0, eps});
            const double se = std::sqrt(*mc.tail_freq * (1 - *mc.tail_freq) / 20000.0);
            CHECK(*mc.tail_freq <= cert.delta + 4 * se);
        }
    }
}

TEST_CASE("median repetitions") {
    CHECK(median_repetitions(1.0 / 3.0, 1e-5) == 21);
    CHECK(median_repetitions(1.0 / 3.0, 1e-10) == 43);
    CHECK(median_repetitions(0.2, 0.2) == 1);
    CHECK_THROWS_AS(median_repetitions(0.4, 1e-5), DomainError);
    Index prev = 1;
    for (double target = 0.3; target > 1e-15; target /= 3.0) {
        const Index r = median_repetitions(1.0 / 3.0, target);
        CHECK(r % 2 == 1);
        CHECK(r >= prev);
        CHECK(median_failure_bound(1.0 / 3.0, r) <= target);
        if (r > 2) CHECK(median_failure_bound(1.0 / 3.0, r - 2) > target);
        prev = r;
    }
}

TEST_CASE("median failure: exact binomial tail and Chernoff") {
    // independent oracle: long double sum of C(5,k) 0.3^k 0.7^(5-k), k = 3..5
    const long double p = 0.3L;
    const long double ref = 10 * p * p * p * (1 - p) * (1 - p) + 5 * p * p * p * p * (1 - p) + p * p * p * p * p;
    CHECK(median_failure_exact(0.3, 5) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-13));
    CHECK(median_failure_exact(0.3, 1) == doctest::Approx(0.3).epsilon(1e-15));
    for (double d : {0.05, 0.1, 0.2, 0.3, 1.0 / 3.0})
        for (Index r : {1, 3, 5, 7, 9, 21})
            CHECK(median_failure_exact(d, r) <= median_failure_chernoff(d, r) * (1 + 1e-12));
    // the plain delta^{R/2} form undershoots the exact tail at delta = 0.3
    CHECK(median_failure_exact(0.3, 5) > median_failure_bound(1.0 / 3.0, 5));
}

TEST_CASE("wilson interval") {
    const auto w = wilson_interval(0, 100);
    CHECK(w.lower == 0.0);
    CHECK(w.upper == doctest::Approx(0.037).epsilon(0.01));
    const auto h = wilson_interval(50, 100);
    CHECK(h.lower < 0.5);
    CHECK(h.upper > 0.5);
}

TEST_CASE("check_ft") {
    const Network net = random_net(5, {2, 6, 1});
    Dataset data;
    for (std::uint64_t i = 0; i < 8; ++i) data.push_back({random_vector(i, 2), Vector::Constant(1, 0.3)});
    const auto zero = check_ft(net, data, CrashModel{{0.0, 0.0, 0.0}}, {}, 0.01);
    CHECK(zero.certificate.delta == 0.0);
    CHECK(zero.empirical->delta_hat == 0.0);

    const CrashModel c{{0.0, 0.02, 0.0}};
    const auto r = check_ft(net, data, c, {}, 0.05, {true, std::nullopt, 500, 3});
    CHECK(r.certificate.method == CertMethod::chebyshev_plus_delta0);
    CHECK(r.layers.size() == 1);
    CHECK(r.certificate.delta0 == doctest::Approx(r.layers[0].delta0));
    CHECK(r.empirical->delta_hat <= r.certificate.delta + 4 * r.empirical->std_error);
    const auto main_form = check_ft(net, data, c, {}, 0.05, {false, std::nullopt, 0, 3});
    CHECK(main_form.certificate.delta <= r.certificate.delta);
    CHECK_FALSE(main_form.empirical);
}
