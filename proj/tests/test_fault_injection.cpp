#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crashcert/fault_injection.hpp"
#include "fixtures.hpp"

using namespace crashcert;
using namespace fixtures;

namespace {

CrashModel input_only(const Network& net, double p) {
    CrashModel c;
    c.p.assign(static_cast<std::size_t>(net.depth() + 1), 0.0);
    c.p[0] = p;
    return c;
}

/// 4-sigma tolerance for a sample variance of a Binomial(n, p) / n scaled variable.
double binomial_variance_tol(double n, double p, double scale, std::size_t samples) {
    const double q = 1.0 - p;
    const double var = scale * scale * n * p * q;
    const double kurtosis = 3.0 + (1.0 - 6.0 * p * q) / (n * p * q);
    return 4.0 * var * std::sqrt((kurtosis - 1.0) / static_cast<double>(samples));
}

} // namespace

TEST_CASE("sample_mask") {
    const Network net = random_net(1, {100, 100, 1});
    RngStream s(3, 0);
    for (bool b : {false, true}) {
        const CrashMask m = sample_mask(net, CrashModel{{b ? 1.0 : 0.0, b ? 1.0 : 0.0, b ? 1.0 : 0.0}}, s);
        for (const auto& layer : m) CHECK((b ? layer.all() : !layer.any()));
    }
    const CrashModel c = input_only(net, 0.1);
    std::size_t crashed = 0;
    const std::size_t masks = 100000;
    for (std::size_t k = 0; k < masks; ++k) {
        RngStream st(5, k);
        crashed += static_cast<std::size_t>(sample_mask(net, c, st)[0].count());
    }
    CHECK(std::abs(static_cast<double>(crashed) / (100.0 * masks) - 0.1) < 0.003);
    const CrashModel out_of_range{{0.5, 2.0, 0.0}}, too_short{{0.5}};
    CHECK_THROWS_AS(out_of_range.validate(net), DomainError);
    CHECK_THROWS_AS(too_short.validate(net), DimensionError);
}

TEST_CASE("monte carlo toy moments") {
    const std::size_t N = 100000;
    const Network avg = averaging_net(4);
    const auto m = monte_carlo_moments(avg, Vector::Ones(4), input_only(avg, 0.1), Head::output(0), {N, 17});
    CHECK(std::abs(m.mean + 0.1) <= 3 * m.std_error);
    CHECK(std::abs(m.variance - 0.0225) <= binomial_variance_tol(4, 0.1, 0.25, N));
    CHECK(m.std_error == doctest::Approx(std::sqrt(m.variance / N)));

    const Network first = first_input_net(3);
    const auto f = monte_carlo_moments(first, Vector::Ones(3), input_only(first, 0.1), Head::output(0), {N, 18});
    CHECK(std::abs(f.mean + 0.1) <= 3 * f.std_error);
    CHECK(std::abs(f.variance - 0.09) <= binomial_variance_tol(1, 0.1, 1.0, N));

    const auto z = monte_carlo_moments(avg, Vector::Ones(4), input_only(avg, 0.0), Head::output(0), {100, 1});
    CHECK(z.mean == 0.0);
    CHECK(z.variance == 0.0);
    CHECK_THROWS_AS(monte_carlo_moments(avg, Vector::Ones(4), input_only(avg, 0.1), Head::output(0), {1, 1}),
                    DomainError);
}

TEST_CASE("exact moments examples") {
    const Network first = first_input_net(1);
    const auto e = exact_moments(first, Vector::Constant(1, 2.0), input_only(first, 0.1), Head::output(0));
    CHECK(e.mean == doctest::Approx(-0.2).epsilon(1e-14));
    CHECK(e.variance == doctest::Approx(0.36).epsilon(1e-13));
    CHECK(e.exact);
    CHECK(e.std_error == 0.0);

    const Network avg = averaging_net(4);
    const auto a = exact_moments(avg, Vector::Ones(4), input_only(avg, 0.1), Head::output(0));
    CHECK(std::abs(a.mean + 0.1) <= 1e-15);
    CHECK(std::abs(a.variance - 0.0225) <= 1e-15);

    const auto z = exact_moments(avg, Vector::Ones(4), input_only(avg, 0.0), Head::output(0));
    CHECK(z.mean == 0.0);
    CHECK(z.variance == 0.0);
}

TEST_CASE("enumeration cap") {
    const Network net = random_net(2, {25, 1});
    try {
        exact_moments(net, Vector::Ones(25), input_only(net, 0.1), Head::output(0));
        FAIL("expected EnumerationInfeasible");
    } catch (const EnumerationInfeasible& e) {
        CHECK(std::string(e.what()).find("24") != std::string::npos);
    }
}

TEST_CASE("exact moments agree with monte carlo") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Network net = random_net(seed, {3, 4, 3, 2});
        const Vector x = random_vector(seed, 3);
        CrashModel c{{0.05, 0.1, 0.2, 0.0}};
        const Head head = Head::output(static_cast<Index>(seed % 2));
        const auto e = exact_moments(net, x, c, head);
        const auto m = monte_carlo_moments(net, x, c, head, {20000, seed});
        CHECK(std::abs(e.mean - m.mean) <= 4 * m.std_error);
    }
}

TEST_CASE("single crash sweep") {
    const Network avg = averaging_net(4);
    const auto b4 = single_crash_sweep(avg, Vector::Ones(4), 0, Head::output(0), 0.1);
    CHECK(b4.mean == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(b4.variance == doctest::Approx(0.025).epsilon(1e-15));

    Network dead = random_net(3, {3, 4, 1});
    dead.layer(2).weights.col(2).setZero();
    CHECK(single_crash_deltas(dead, Vector::Ones(3), 1, Head::output(0))[2] == 0.0);

    // first-order gap shrinks linearly in p
    const Network net = random_net(7, {4, 5, 4, 1});
    const Vector x = random_vector(7, 4);
    double prev = 0.0;
    for (double p : {1e-2, 1e-3, 1e-4}) {
        CrashModel c{{0.0, p, 0.0, 0.0}};
        const auto e = exact_moments(net, x, c, Head::output(0));
        const auto s = single_crash_sweep(net, x, 1, Head::output(0), p);
        const double gap = std::abs(s.mean - e.mean) / std::abs(e.mean);
        if (prev > 0.0) {
            CHECK(gap < prev / 5.0);
            CHECK(gap > prev / 20.0);
        }
        prev = gap;
    }
}

TEST_CASE("monte carlo is thread-count invariant") {
    const Network net = random_net(9, {5, 8, 2});
    const Vector x = random_vector(9, 5);
    const CrashModel c{{0.1, 0.1, 0.0}};
    const auto m1 = monte_carlo_moments(net, x, c, Head::output(0), {5000, 3, 1});
    for (unsigned t : {2U, 8U}) {
        const auto mt = monte_carlo_moments(net, x, c, Head::output(0), {5000, 3, t});
        CHECK(mt.mean == m1.mean);
        CHECK(mt.variance == m1.variance);
    }
    const auto e1 = exact_moments(net, x, c, Head::output(0), {}, 1);
    const auto e8 = exact_moments(net, x, c, Head::output(0), {}, 8);
    CHECK(e1.mean == e8.mean);
    CHECK(e1.variance == e8.variance);
}

TEST_CASE("superposition") {
    const Network net = random_net(11, {3, 5, 5, 5, 1});
    const Vector x = random_vector(11, 3);
    CrashModel c{{0.01, 0.01, 0.01, 0.01, 0.0}};
    const auto r = superposition_check(net, x, c, Head::output(0), {0, 1}, {2, 3});
    CHECK(r.exact);
    CHECK(r.mean_relative_error <= 0.05);
    CHECK(r.variance_relative_error <= 0.05);

    CrashModel zero_b{{0.01, 0.01, 0.0, 0.0, 0.0}};
    const auto z = superposition_check(net, x, zero_b, Head::output(0), {0, 1}, {2, 3});
    CHECK(z.mean_relative_error == 0.0);
    CHECK(z.variance_relative_error == 0.0);
    CHECK_THROWS_AS(superposition_check(net, x, c, Head::output(0), {0, 1}, {1, 2}), DomainError);
}

TEST_CASE("median replica simulation") {
    const Network first = first_input_net(1);
    const LossSpec spec{LossKind::bounded_mse, Vector::Ones(1), 0, 1.0};
    const Head head = Head::of_loss(spec);
    const CrashModel c = input_only(first, 0.3);
    const auto r1 = median_replica_sim(first, Vector::Ones(1), c, head, 1, 0.5, 20000, 4);
    CHECK(r1.failure_rate == r1.base_rate);
    CHECK(std::abs(r1.failure_rate - 0.3) <= 4 * r1.std_error);
    double prev = 1.0, prev_se = 0.0;
    for (Index R : {1, 3, 5, 7, 9}) {
        const auto r = median_replica_sim(first, Vector::Ones(1), c, head, R, 0.5, 20000, 4);
        CHECK(r.failure_rate <= prev + 4 * std::max(r.std_error, prev_se));
        prev = r.failure_rate;
        prev_se = r.std_error;
    }
    CHECK(median_replica_sim(first, Vector::Ones(1), input_only(first, 0.0), head, 5, 0.5, 1000, 1).failure_rate ==
          0.0);
    CHECK_THROWS_AS(median_replica_sim(first, Vector::Ones(1), c, head, 4, 0.5, 10, 1), DomainError);
}

TEST_CASE("empirical tail") {
    const Network net = random_net(12, {2, 4, 1});
    Dataset data;
    for (std::uint64_t i = 0; i < 10; ++i) data.push_back({random_vector(i, 2), Vector::Constant(1, 0.2)});
    const CrashModel c{{0.2, 0.2, 0.0}};
    CHECK(empirical_tail(net, data, c, {}, 2.0, 100, 1).delta_hat == 0.0);
    CHECK(empirical_tail(net, data, CrashModel{{0, 0, 0}}, {}, 1e-9, 100, 1).delta_hat == 0.0);
    const auto a = empirical_tail(net, data, c, {}, 1e-3, 200, 5, 1);
    const auto b = empirical_tail(net, data, c, {}, 1e-3, 200, 5, 8);
    CHECK(a.hits == b.hits);
}

TEST_CASE("dataset median simulation with R = 1 reproduces the empirical tail") {
    const Network net = random_net(12, {2, 4, 1});
    Dataset data;
    for (std::uint64_t i = 0; i < 10; ++i) data.push_back({random_vector(i, 2), Vector::Constant(1, 0.2)});
    const CrashModel c{{0.2, 0.2, 0.0}};
    const TailEstimate tail = empirical_tail(net, data, c, {}, 1e-3, 50, 9);
    const MedianSimResult sim = median_replica_sim(net, data, c, LossConfig{}, 1, 1e-3, 500, 9);
    CHECK(tail.hits > 0);
    CHECK(sim.failure_rate == tail.delta_hat);
    CHECK(sim.base_rate == tail.delta_hat);
}

TEST_CASE("variance standard error matches the Bernoulli fourth moment") {
    // delta = -x xi with xi ~ Bernoulli(p): central moments are closed form.
    const Network net = first_input_net(1);
    const double p = 0.2, x = 1.5;
    SamplingOptions opt;
    opt.samples = 20000;
    opt.seed = 4;
    const ErrorMoments m = monte_carlo_moments(net, Vector::Constant(1, x), CrashModel{{p, 0.0}}, Head::output(0), opt);
    const double var = x * x * p * (1 - p);
    const double mu4 = std::pow(x, 4) * p * (1 - p) * (1 - 3 * p + 3 * p * p);
    const double se = std::sqrt((mu4 - var * var) / 20000.0);
    CHECK(m.variance_std_error == doctest::Approx(se).epsilon(0.05));
    CHECK(std::abs(m.variance - var) <= 4.0 * se);

    Dataset data{{Vector::Constant(1, x), Vector::Zero(1)}};
    const ErrorMoments d = monte_carlo_dataset_moments(net, data, CrashModel{{p, 0.0}}, Head::output(0), 20000, 4);
    CHECK(std::abs(d.mean + p * x) <= 4.0 * d.std_error);
    CHECK(std::abs(d.variance - var) <= 4.0 * d.variance_std_error);
}
