#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crashcert/bounds.hpp"
#include "crashcert/gradients.hpp"
#include "crashcert/synthetic.hpp"
#include "crashcert/trainer.hpp"
#include "fixtures.hpp"

using namespace crashcert;

namespace {

Dataset line_data(std::size_t n) {
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = -0.4 + 0.8 * static_cast<double>(i) / static_cast<double>(n - 1);
        d.push_back({Vector::Constant(1, x), Vector::Constant(1, 2.0 * x)});
    }
    return d;
}

bool same_weights(const Network& a, const Network& b) {
    for (Index l = 1; l <= a.depth(); ++l)
        if (a.layer(l).weights != b.layer(l).weights || a.layer(l).bias != b.layer(l).bias) return false;
    return true;
}

double total_r1(const Network& net, const Dataset& data, const LossConfig& cfg) {
    RegWeights w;
    w.layers = {1};
    double s = 0.0;
    for (const auto& t : reg_terms(net, data, cfg, w).crash_layers) s += t.r1;
    return s;
}

/// Variance of the loss increase over (input, mask) with the standard error
/// of the variance estimate, sqrt((m4 - s^4) / N).
std::pair<double, double> variance_with_se(const Network& net, const Dataset& data, const CrashModel& crash,
                                           std::size_t samples, std::uint64_t seed) {
    std::vector<double> d;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Head head = Head::of_loss(loss_spec_for(data[i], LossConfig{}));
        for (std::size_t s = 0; s < samples; ++s) {
            RngStream rng(seed, (static_cast<std::uint64_t>(i) << 32) | s);
            d.push_back(delta_head(net, data[i].x, sample_mask(net, crash, rng), head));
        }
    }
    const double n = static_cast<double>(d.size());
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : d) {
        const double c = (v - mean) * (v - mean);
        m2 += c;
        m4 += c * c;
    }
    m2 /= n;
    m4 /= n;
    return {m2, std::sqrt(std::max(0.0, m4 - m2 * m2) / n)};
}

} // namespace

TEST_CASE("single linear neuron fits y = 2x") {
    Network net({Layer{Matrix::Zero(1, 1), Vector::Zero(1), Activation::linear}});
    TrainConfig cfg;
    cfg.epochs = 400;
    cfg.batch_size = 10;
    cfg.learning_rate = 0.5;
    const TrainResult r = train(net, line_data(50), cfg);
    CHECK(std::abs(r.net.layer(1).weights(0, 0) - 2.0) <= 1e-3);
    CHECK(std::abs(r.net.layer(1).bias[0]) <= 1e-3);
    CHECK(r.best_value <= r.history.front());
}

TEST_CASE("sgd_step with zero regularization is plain backprop SGD") {
    const Network net0 = fixtures::random_net(3, {2, 5, 1});
    const Dataset batch = synth_dataset({SynthKind::smooth_2d, 8, 0.0, 1});
    TrainConfig cfg;
    cfg.learning_rate = 0.3;

    Network net = net0;
    Network manual = net0;
    for (int step = 0; step < 5; ++step) {
        sgd_step(net, batch, cfg);
        std::vector<Matrix> dw;
        std::vector<Vector> db;
        for (Index l = 1; l <= manual.depth(); ++l) {
            dw.push_back(Matrix::Zero(manual.layer(l).weights.rows(), manual.layer(l).weights.cols()));
            db.push_back(Vector::Zero(manual.layer(l).bias.size()));
        }
        for (const Example& ex : batch) {
            const GradientBundle g = backprop(manual, ex.x, Head::of_loss(loss_spec_for(ex, cfg.loss)));
            for (std::size_t k = 0; k < dw.size(); ++k) {
                dw[k] += g.d_weights[k] / 8.0;
                db[k] += g.d_bias[k] / 8.0;
            }
        }
        for (Index l = 1; l <= manual.depth(); ++l) {
            manual.layer(l).weights -= 0.3 * dw[static_cast<std::size_t>(l - 1)];
            manual.layer(l).bias -= 0.3 * db[static_cast<std::size_t>(l - 1)];
        }
    }
    for (Index l = 1; l <= net.depth(); ++l) {
        CHECK((net.layer(l).weights - manual.layer(l).weights).cwiseAbs().maxCoeff() <= 1e-14);
        CHECK((net.layer(l).bias - manual.layer(l).bias).cwiseAbs().maxCoeff() <= 1e-14);
    }
}

TEST_CASE("sgd_step applies exactly the regularized_loss gradient") {
    const Network net0 = fixtures::random_net(5, {1, 6, 1});
    const Dataset batch = synth_dataset({SynthKind::smooth_1d, 12, 0.0, 2});
    TrainConfig cfg;
    cfg.learning_rate = 0.2;
    cfg.reg.lambda = 0.1;
    cfg.reg.mu = 1e-3;
    cfg.reg.psi_deriv = 1e-3;
    cfg.reg.psi_smooth = 1e-3;
    cfg.reg.nu = 1e-3;
    const RegularizedLoss rl = regularized_loss(net0, batch, cfg.loss, cfg.reg);
    Network net = net0;
    const double before = sgd_step(net, batch, cfg);
    CHECK(before == rl.value);
    double checksum_step = 0.0, checksum_grad = 0.0;
    for (Index l = 1; l <= net.depth(); ++l) {
        const auto k = static_cast<std::size_t>(l - 1);
        CHECK(net.layer(l).weights == (net0.layer(l).weights - 0.2 * rl.d_weights[k]).eval());
        CHECK(net.layer(l).bias == (net0.layer(l).bias - 0.2 * rl.d_bias[k]).eval());
        checksum_step += (net0.layer(l).weights - net.layer(l).weights).sum() / 0.2;
        checksum_grad += rl.d_weights[k].sum();
    }
    CHECK(checksum_step == doctest::Approx(checksum_grad).epsilon(1e-12));
}

TEST_CASE("training is deterministic and keeps the best checkpoint") {
    const Network net = init_continuous(std::vector<Index>{1, 12, 1}, 4);
    const Dataset data = synth_dataset({SynthKind::smooth_1d, 40, 0.02, 7});
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.2;
    cfg.reg.lambda = 0.05;
    cfg.lr_scaling = LrScaling::mean_field;
    cfg.seed = 11;
    const TrainResult a = train(net, data, cfg);
    const TrainResult b = train(net, data, cfg);
    CHECK(same_weights(a.net, b.net));
    CHECK(a.history == b.history);
    CHECK(a.history.size() == 31);
    CHECK(a.best_value == *std::min_element(a.history.begin(), a.history.end()));
    CHECK(a.best_value <= a.history.front());
    CHECK(regularized_loss(a.net, data, cfg.loss, cfg.reg, false).value == a.best_value);

    cfg.seed = 12;
    const TrainResult c = train(net, data, cfg);
    CHECK_FALSE(same_weights(a.net, c.net));
}

TEST_CASE("dropout with p_t = 0 reproduces plain training") {
    const Network net = init_continuous(std::vector<Index>{1, 10, 1}, 2);
    const Dataset data = synth_dataset({SynthKind::smooth_1d, 30, 0.0, 3});
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 5;
    cfg.learning_rate = 0.3;
    cfg.seed = 5;
    const TrainResult plain = train(net, data, cfg);
    cfg.dropout_p_train = CrashModel{{0.0, 0.0, 0.0}};
    const TrainResult dropped = train_with_dropout(net, data, cfg);
    CHECK(same_weights(plain.net, dropped.net));
    CHECK(plain.history == dropped.history);
}

TEST_CASE("dropout is unscaled: p_t = 1 silences the hidden layer") {
    const Network net = init_continuous(std::vector<Index>{1, 8, 1}, 9);
    const Dataset data = synth_dataset({SynthKind::smooth_1d, 20, 0.0, 4});
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 20;
    cfg.learning_rate = 0.5;
    cfg.dropout_p_train = CrashModel{{0.0, 1.0, 0.0}};
    const TrainResult r = train_with_dropout(net, data, cfg);
    // Only the output bias receives gradient and it converges to the target mean.
    double mean_target = 0.0;
    for (const auto& ex : data) mean_target += ex.target[0] / 20.0;
    const Network& last = r.net;
    CHECK(last.layer(1).weights == net.layer(1).weights);
    CHECK(last.layer(1).bias == net.layer(1).bias);
    CHECK(last.layer(2).weights == net.layer(2).weights);
    CHECK(last.layer(2).bias[0] == doctest::Approx(mean_target).epsilon(1e-6));
}

TEST_CASE("train_with_dropout requires a crash model and validates it") {
    const Network net = init_continuous(std::vector<Index>{1, 4, 1}, 1);
    const Dataset data = synth_dataset({SynthKind::smooth_1d, 4, 0.0, 1});
    TrainConfig cfg;
    CHECK_THROWS_AS(train_with_dropout(net, data, cfg), DomainError);
    cfg.dropout_p_train = CrashModel{{0.0, 0.5}};
    CHECK_THROWS_AS(train_with_dropout(net, data, cfg), DimensionError);
    cfg.dropout_p_train.reset();
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(train(net, data, cfg), DomainError);
    cfg.learning_rate = 0.1;
    CHECK_THROWS_AS(train(net, Dataset{}, cfg), DomainError);
}

TEST_CASE("divergence raises TrainingDiverged") {
    // Overflowing hidden activations of opposite sign give inf - inf = NaN at the output.
    Matrix w1(2, 1), w2(1, 2);
    w1 << 1e200, -1e200;
    w2 << 1e200, 1e200;
    const Network net({Layer{w1, Vector::Zero(2), Activation::linear}, Layer{w2, Vector::Zero(1), Activation::linear}});
    Dataset data{{Vector::Constant(1, 0.5), Vector::Constant(1, 1.0)}};
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_WITH_AS(train(net, data, cfg), doctest::Contains("diverged"), TrainingDiverged);
}

TEST_CASE("variance regularization lowers R1") {
    const Network net = init_continuous(std::vector<Index>{1, 24, 1}, 6);
    const Dataset data = synth_dataset({SynthKind::smooth_1d, 60, 0.02, 8});
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 10;
    cfg.learning_rate = 0.2;
    cfg.lr_scaling = LrScaling::mean_field;
    cfg.seed = 3;
    cfg.reg.layers = {1};
    const TrainResult base = train(net, data, cfg);
    cfg.reg.lambda = 2.0;
    const TrainResult reg = train(net, data, cfg);
    const double r1_base = total_r1(base.net, data, cfg.loss);
    const double r1_reg = total_r1(reg.net, data, cfg.loss);
    INFO("R1 base = " << r1_base << ", R1 regularized = " << r1_reg);
    CHECK(r1_reg < r1_base);
}

TEST_CASE("dropout training at p_t = p_i lowers the crash variance") {
    const Network net = init_continuous(std::vector<Index>{1, 32, 1}, 21);
    const Dataset data = synth_dataset({SynthKind::smooth_1d, 60, 0.0, 22});
    const CrashModel crash{{0.0, 0.05, 0.0}};
    TrainConfig cfg;
    cfg.epochs = 600;
    cfg.batch_size = 10;
    cfg.learning_rate = 0.5;
    cfg.lr_scaling = LrScaling::mean_field;
    cfg.seed = 8;
    const TrainResult plain = train(net, data, cfg);
    cfg.dropout_p_train = crash;
    const TrainResult dropped = train_with_dropout(net, data, cfg);
    const auto [v0, se0] = variance_with_se(plain.net, data, crash, 2000, 99);
    const auto [v1, se1] = variance_with_se(dropped.net, data, crash, 2000, 99);
    INFO("Var p_t=0: " << v0 << " +- " << se0 << ", Var p_t=p_i: " << v1 << " +- " << se1);
    CHECK(v0 - v1 > 4.0 * std::hypot(se0, se1));
}

TEST_CASE("rank loss") {
    const std::vector<double> ref{1, 2, 3, 4, 5, 6};
    CHECK(rank_loss(ref, ref) == 0.0);
    const std::vector<double> rev{6, 5, 4, 3, 2, 1};
    CHECK(rank_loss(rev, ref) == doctest::Approx(15.0 / 36.0));
    const std::vector<double> flat(6, 1.0);
    CHECK(rank_loss(flat, ref) == doctest::Approx(7.5 / 36.0));
    CHECK_THROWS_AS(rank_loss(std::vector<double>{1, 2}, ref), DimensionError);
    CHECK_THROWS_AS(rank_loss(std::vector<double>{1}, std::vector<double>{1}), DomainError);

    // Large reversal approaches 0.5.
    std::vector<double> up(400), down(400);
    std::iota(up.begin(), up.end(), 0.0);
    std::reverse_copy(up.begin(), up.end(), down.begin());
    CHECK(rank_loss(down, up) == doctest::Approx(0.5).epsilon(0.01));

    // Random permutations: expectation (n - 1) / 4n.
    const std::size_t n = 20, trials = 4000;
    std::vector<double> ref20(n);
    std::iota(ref20.begin(), ref20.end(), 0.0);
    std::vector<double> values;
    for (std::size_t t = 0; t < trials; ++t) {
        std::vector<double> perm = ref20;
        RngStream rng(17, t);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        values.push_back(rank_loss(perm, ref20));
    }
    const SampleStats s = sample_stats(values);
    const double expected = (n - 1.0) / (4.0 * n);
    CHECK(std::abs(s.mean - expected) <= 4.0 * std::sqrt(s.variance / trials));
    CHECK(s.mean == doctest::Approx(0.25).epsilon(0.06));
}

TEST_CASE("continuous initialization has a width-independent limit") {
    const std::vector<Index> narrow{1, 64, 1}, wide{1, 256, 1};
    const Network a = init_continuous(narrow, 13);
    const Network b = init_continuous(wide, 13);
    CHECK(a.depth() == 2);
    CHECK(a.layer(2).activation == Activation::linear);
    CHECK(a.layer(1).activation == Activation::sigmoid);
    // Same limit function: outputs agree up to discretization.
    for (double x : {-0.8, 0.0, 0.5}) {
        const Vector in = Vector::Constant(1, x);
        CHECK(forward(a, in).output()[0] == doctest::Approx(forward(b, in).output()[0]).epsilon(1e-2));
    }
    // Continuity cost stays bounded while the single-crash variance falls like 1 / n.
    CHECK(continuity_c1(b.layer(1).weights) <= 1.5 * continuity_c1(a.layer(1).weights) + 1e-9);
    const Vector x = Vector::Constant(1, 0.3);
    const double va = *bound_taylor(a, x, CrashModel{{0.0, 0.01, 0.0}}, Head::output(0)).variance;
    const double vb = *bound_taylor(b, x, CrashModel{{0.0, 0.01, 0.0}}, Head::output(0)).variance;
    CHECK(va / vb == doctest::Approx(4.0).epsilon(0.05));
    // Positive-biased output weights keep the last hidden layer balanced.
    CHECK((a.layer(2).weights.array() > 0.0).all());
}

TEST_CASE("random initialization does not decay with width") {
    const Vector x = Vector::Constant(1, 0.3);
    std::vector<double> ratios;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Network a = init_random(std::vector<Index>{1, 64, 1}, seed);
        const Network b = init_random(std::vector<Index>{1, 256, 1}, seed + 1000);
        ratios.push_back(*bound_taylor(a, x, CrashModel{{0.0, 0.01, 0.0}}, Head::output(0)).variance /
                         *bound_taylor(b, x, CrashModel{{0.0, 0.01, 0.0}}, Head::output(0)).variance);
    }
    std::sort(ratios.begin(), ratios.end());
    const double median = 0.5 * (ratios[9] + ratios[10]);
    CHECK(median > 0.5);
    CHECK(median < 2.0);
    const Network net = init_random(std::vector<Index>{3, 500, 2}, 1);
    const double var = net.layer(1).weights.squaredNorm() / static_cast<double>(net.layer(1).weights.size());
    CHECK(var == doctest::Approx(1.0 / 3.0).epsilon(0.05));
    CHECK(net.layer(1).bias.isZero());
    CHECK_THROWS_AS(init_random(std::vector<Index>{3}, 1), DimensionError);
}

TEST_CASE("synthetic datasets are deterministic and prefix-stable") {
    for (SynthKind k : {SynthKind::smooth_1d, SynthKind::smooth_2d, SynthKind::digits8x8}) {
        const Dataset a = synth_dataset({k, 30, 0.1, 5});
        const Dataset b = synth_dataset({k, 30, 0.1, 5});
        const Dataset c = synth_dataset({k, 50, 0.1, 5});
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].x == b[i].x);
            CHECK(a[i].target == b[i].target);
            CHECK(a[i].x == c[i].x);
        }
    }
    const Dataset digits = synth_dataset({SynthKind::digits8x8, 200, 0.1, 1});
    CHECK(digits.front().x.size() == 64);
    for (const auto& ex : digits) {
        CHECK(ex.x.minCoeff() >= 0.0);
        CHECK(ex.x.maxCoeff() <= 1.0);
        CHECK(ex.target[0] >= 0.0);
        CHECK(ex.target[0] <= 9.0);
    }
}

TEST_CASE("synthetic spec parsing") {
    const SynthSpec s = parse_synth_spec("synth:smooth-2d:120:0.05:9");
    CHECK(s.kind == SynthKind::smooth_2d);
    CHECK(s.n_samples == 120);
    CHECK(s.noise == 0.05);
    CHECK(s.seed == 9);
    CHECK(parse_synth_spec("synth:digits8x8").n_samples == 200);
    CHECK(parse_synth_spec(format_synth_spec(s)).noise == s.noise);
    CHECK_THROWS_AS(parse_synth_spec("synth:spirals"), SchemaError);
    CHECK_THROWS_AS(parse_synth_spec("synth:smooth-1d:ten"), SchemaError);
    CHECK_THROWS_AS(parse_synth_spec("data.csv"), SchemaError);
}
