#include "crashcert/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "crashcert/synthetic.hpp"

namespace crashcert {

bool ExperimentReport::all_pass() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.pass; });
}

const Metric& ExperimentReport::metric(std::string_view name) const {
    for (const Metric& m : metrics)
        if (m.name == name) return m;
    throw DomainError("experiment report '" + this->name + "' has no metric '" + std::string(name) + "'");
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DimensionError("loglog_slope: length mismatch");
    if (x.size() < 2) throw DomainError("loglog_slope: need at least two points");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("loglog_slope: values must be positive");
        mx += std::log(x[i]) / n;
        my += std::log(y[i]) / n;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    if (sxx == 0.0) throw DomainError("loglog_slope: x values are all equal");
    return sxy / sxx;
}

Dataset one_hot(const Dataset& data, Index classes) {
    Dataset out;
    out.reserve(data.size());
    for (const Example& ex : data) {
        if (ex.target.size() != 1) throw DimensionError("one_hot: expected class-index targets");
        const auto k = static_cast<Index>(std::lround(ex.target[0]));
        if (k < 0 || k >= classes) throw DomainError("one_hot: class index out of range");
        Vector t = Vector::Zero(classes);
        t[k] = 1.0;
        out.push_back({ex.x, std::move(t)});
    }
    return out;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

/// Mean and standard error over repeats.
Metric summarize(std::string name, const std::vector<double>& values) {
    const SampleStats s = sample_stats(values);
    Metric m;
    m.name = std::move(name);
    m.value = s.mean;
    m.repeats = values.size();
    m.std_error = values.size() > 1 ? std::sqrt(s.variance / static_cast<double>(values.size())) : 0.0;
    return m;
}

double median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

std::vector<double> sweep_values(double hi, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = n == 1 ? 0.0 : hi * static_cast<double>(k) / static_cast<double>(n - 1);
    return v;
}

double weight_inf_norm_sum(const Network& net) {
    double s = 0.0;
    for (const auto& layer : net.layers()) s += matrix_norm(layer.weights, NormKind::inf);
    return s;
}

/// Random smooth network as used by the bound comparison: N(0, 1/fan_in)
/// weights, N(0, 0.3^2) biases, sigmoid hidden layers.
Network random_smooth_net(std::uint64_t seed, const std::vector<Index>& widths) {
    RngStream rng(seed, 0x626f756e64ULL);
    std::vector<Layer> layers;
    for (std::size_t l = 1; l < widths.size(); ++l) {
        Layer layer{Matrix(widths[l], widths[l - 1]), Vector(widths[l]),
                    l + 1 == widths.size() ? Activation::linear : Activation::sigmoid};
        const double s = 1.0 / std::sqrt(static_cast<double>(widths[l - 1]));
        for (Index i = 0; i < layer.weights.rows(); ++i) {
            for (Index j = 0; j < layer.weights.cols(); ++j) layer.weights(i, j) = s * rng.normal();
            layer.bias[i] = 0.3 * rng.normal();
        }
        layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
}

/// E_x Var(delta | x) by Monte Carlo per input, with its standard error.
/// The spread of E(delta | x) over inputs is excluded: it does not shrink
/// with width.
std::pair<double, double> mean_conditional_variance(const Network& net, const Dataset& data, const CrashModel& crash,
                                                    const Head& head, std::size_t samples, std::uint64_t seed) {
    double v = 0.0, se2 = 0.0;
    const auto n = static_cast<double>(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const ErrorMoments m = monte_carlo_moments(net, data[i].x, crash, head, {samples, mix64(seed + i), 1, {}});
        v += m.variance / n;
        se2 += m.variance_std_error * m.variance_std_error / (n * n);
    }
    return {v, std::sqrt(se2)};
}

} // namespace

// ---------------------------------------------------------------------------
// Dropout sweep
// ---------------------------------------------------------------------------

TrainConfig DropoutSweepConfig::default_train() {
    TrainConfig t;
    t.epochs = 60;
    t.batch_size = 10;
    t.learning_rate = 0.5;
    return t;
}

ExperimentReport run_dropout_sweep(const DropoutSweepConfig& cfg) {
    if (cfg.repeats < 3) throw DomainError("dropout sweep: statistical assertions need at least 3 repeats");
    if (cfg.sweep_values < 2) throw DomainError("dropout sweep: need at least two p_t values");
    const std::vector<double> pts = sweep_values(cfg.max_factor * cfg.p_inference, cfg.sweep_values);
    std::vector<double> neg_pts(pts.size());
    std::transform(pts.begin(), pts.end(), neg_pts.begin(), [](double v) { return -v; });
    const CrashModel crash{{0.0, cfg.p_inference, 0.0}};
    const LossConfig loss{LossKind::bounded_mse, 1.0};

    enum Col { crashing_mae_c, clean_mae_c, b3_mean_c, b3_var_c, b1_c, b2_c, norm_c, n_cols };
    static const char* kNames[] = {"crashing_mae", "clean_mae", "b3_mean", "b3_variance", "b1_spectral", "b2_absolute",
                                   "weight_inf_norm"};
    const std::size_t runs = cfg.repeats * pts.size();
    std::vector<std::array<double, n_cols>> results(runs);

    parallel_for(runs, resolve_threads(cfg.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t run = begin; run < end; ++run) {
            const std::size_t r = run / pts.size();
            const double pt = pts[run % pts.size()];
            const std::uint64_t seed = cfg.seed * 1000003 + r;
            const Dataset train_set =
                one_hot(synth_dataset({SynthKind::digits8x8, cfg.train_samples, cfg.pixel_noise, seed}), 10);
            const Dataset test_set =
                one_hot(synth_dataset({SynthKind::digits8x8, cfg.test_samples, cfg.pixel_noise, seed ^ 0x7e57ULL}), 10);
            // Each network is trained independently; data is shared within a repeat.
            const std::uint64_t net_seed = mix64(seed ^ mix64(run));
            TrainConfig tc = cfg.train;
            tc.loss = loss;
            tc.seed = net_seed;
            tc.dropout_p_train = CrashModel{{0.0, pt, 0.0}};
            const Network init = init_random(std::vector<Index>{64, cfg.hidden, 10}, net_seed);
            const Network net = train_with_dropout(init, train_set, tc).net;

            auto& row = results[run];
            row[crashing_mae_c] = crashing_mae(net, test_set, crash, cfg.mc_samples, seed, 1).mean;
            row[clean_mae_c] = crashing_mae(net, test_set, CrashModel{{0.0, 0.0, 0.0}}, 1, seed, 1).mean;
            const BoundReport b3 = bound_taylor_dataset(net, test_set, crash, loss);
            row[b3_mean_c] = b3.mean;
            row[b3_var_c] = *b3.variance;
            double b1 = 0.0, b2 = 0.0;
            for (const Example& ex : test_set) {
                b1 += bound_spectral(net, ex.x, crash).mean;
                b2 += bound_absolute(net, ex.x, crash).mean_vector.mean();
            }
            row[b1_c] = b1 / static_cast<double>(test_set.size());
            row[b2_c] = b2 / static_cast<double>(test_set.size());
            row[norm_c] = weight_inf_norm_sum(net);
        }
    });

    ExperimentReport rep;
    rep.name = "dropout-sweep";
    rep.parameters = {{"p_inference", cfg.p_inference},
                      {"sweep_values", static_cast<double>(cfg.sweep_values)},
                      {"max_factor", cfg.max_factor},
                      {"repeats", static_cast<double>(cfg.repeats)},
                      {"train_samples", static_cast<double>(cfg.train_samples)},
                      {"test_samples", static_cast<double>(cfg.test_samples)},
                      {"hidden", static_cast<double>(cfg.hidden)},
                      {"epochs", static_cast<double>(cfg.train.epochs)},
                      {"learning_rate", cfg.train.learning_rate},
                      {"mc_samples", static_cast<double>(cfg.mc_samples)},
                      {"seed", static_cast<double>(cfg.seed)}};

    Table runs_table{"runs", {"repeat", "p_train"}, {}};
    for (const char* n : kNames) runs_table.columns.emplace_back(n);
    for (std::size_t run = 0; run < runs; ++run) {
        std::vector<double> row{static_cast<double>(run / pts.size()), pts[run % pts.size()]};
        row.insert(row.end(), results[run].begin(), results[run].end());
        runs_table.rows.push_back(std::move(row));
    }

    Table rank_table{"rank_loss", {"repeat"}, {}};
    for (const char* n : kNames) rank_table.columns.emplace_back(n);
    std::vector<std::vector<double>> rank_by_metric(n_cols);
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        std::vector<double> row{static_cast<double>(r)};
        for (std::size_t c = 0; c < n_cols; ++c) {
            std::vector<double> scores(pts.size());
            for (std::size_t k = 0; k < pts.size(); ++k) scores[k] = results[r * pts.size() + k][c];
            // Lower metric = more robust, expected for larger p_t.
            const double rl = rank_loss(scores, neg_pts);
            rank_by_metric[c].push_back(rl);
            row.push_back(rl);
        }
        rank_table.rows.push_back(std::move(row));
    }
    rep.tables = {std::move(runs_table), std::move(rank_table)};
    for (std::size_t c = 0; c < n_cols; ++c)
        rep.metrics.push_back(summarize(std::string("rank_loss_") + kNames[c], rank_by_metric[c]));

    std::vector<double> mae_by_pt(pts.size(), 0.0);
    for (std::size_t run = 0; run < runs; ++run)
        mae_by_pt[run % pts.size()] += results[run][crashing_mae_c] / static_cast<double>(cfg.repeats);
    for (std::size_t k = 0; k < pts.size(); ++k) rep.metrics.push_back({"crashing_mae_pt" + std::to_string(k), mae_by_pt[k], 0.0, cfg.repeats});

    const Metric& var_rl = rep.metric("rank_loss_b3_variance");
    const Metric& b1_rl = rep.metric("rank_loss_b1_spectral");
    const Metric& mae_rl = rep.metric("rank_loss_crashing_mae");
    rep.assertions.push_back({"b3 variance rank loss <= 0.15", var_rl.value <= 0.15,
                              fmt(var_rl.value) + " +- " + fmt(var_rl.std_error)});
    rep.assertions.push_back({"b3 variance rank loss < spectral bound rank loss", var_rl.value < b1_rl.value,
                              fmt(var_rl.value) + " vs " + fmt(b1_rl.value)});
    rep.assertions.push_back({"b3 variance rank loss < crashing MAE rank loss", var_rl.value < mae_rl.value,
                              fmt(var_rl.value) + " vs " + fmt(mae_rl.value)});
    const auto worst = std::max_element(mae_by_pt.begin(), mae_by_pt.end()) - mae_by_pt.begin();
    rep.assertions.push_back({"p_t = 0 has the largest crashing MAE", worst == 0,
                              "largest at p_t = " + fmt(pts[static_cast<std::size_t>(worst)])});
    return rep;
}

// ---------------------------------------------------------------------------
// Width sweep
// ---------------------------------------------------------------------------

std::string_view to_string(WidthSweepMode m) {
    switch (m) {
    case WidthSweepMode::duplication: return "duplication";
    case WidthSweepMode::regularized: return "regularized";
    case WidthSweepMode::random: return "random";
    }
    return "?";
}

WidthSweepMode width_sweep_mode_from_string(std::string_view name) {
    for (auto m : {WidthSweepMode::duplication, WidthSweepMode::regularized, WidthSweepMode::random})
        if (to_string(m) == name) return m;
    throw SchemaError("unknown width sweep mode '" + std::string(name) + "' (expected duplication, regularized or random)");
}

TrainConfig WidthSweepConfig::default_train() {
    TrainConfig t;
    t.epochs = 150;
    t.batch_size = 10;
    t.learning_rate = 0.2;
    return t;
}

RegWeights WidthSweepConfig::default_reg() {
    RegWeights w;
    w.psi_deriv = 1e-4;
    w.psi_smooth = 1e-2;
    return w;
}

ExperimentReport run_width_sweep(const WidthSweepConfig& cfg) {
    if (cfg.widths.size() < 3) throw DomainError("width sweep: need at least 3 widths");
    if (cfg.repeats < 3) throw DomainError("width sweep: statistical assertions need at least 3 repeats");
    if (cfg.mode == WidthSweepMode::duplication)
        for (Index w : cfg.widths)
            if (w % cfg.widths.front() != 0) throw DomainError("width sweep: duplication needs multiples of the first width");
    const CrashModel crash{{0.0, cfg.p, 0.0}};
    const std::size_t nw = cfg.widths.size();
    std::vector<double> var(cfg.repeats * nw), var_se(cfg.repeats * nw);

    auto trained = [&](Index width, std::uint64_t seed, const Dataset& data) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        if (cfg.mode == WidthSweepMode::random) {
            tc.lr_scaling = LrScaling::uniform;
            Network net = init_random(std::vector<Index>{1, width, 1}, seed);
            return cfg.train_random ? train(std::move(net), data, tc).net : net;
        }
        tc.lr_scaling = LrScaling::mean_field;
        tc.reg = cfg.reg;
        tc.reg.layers = {1};
        return train(init_continuous(std::vector<Index>{1, width, 1}, seed), data, tc).net;
    };

    parallel_for(cfg.repeats, resolve_threads(cfg.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            const std::uint64_t seed = cfg.seed * 1000003 + r;
            const Dataset data = synth_dataset({SynthKind::smooth_1d, cfg.data_samples, 0.02, seed});
            Network base;
            if (cfg.mode == WidthSweepMode::duplication) base = trained(cfg.widths.front(), seed, data);
            for (std::size_t k = 0; k < nw; ++k) {
                const Network net = cfg.mode == WidthSweepMode::duplication
                                        ? duplicate_neurons(base, 1, cfg.widths[k] / cfg.widths.front())
                                        : trained(cfg.widths[k], seed, data);
                const auto [v, se] = mean_conditional_variance(net, data, crash, Head::output(0), cfg.mc_samples,
                                                               seed ^ 0x5eedULL);
                var[r * nw + k] = v;
                var_se[r * nw + k] = se;
            }
        }
    });

    ExperimentReport rep;
    rep.name = "width-sweep";
    rep.parameters = {{"mode", static_cast<double>(cfg.mode)},
                      {"p", cfg.p},
                      {"repeats", static_cast<double>(cfg.repeats)},
                      {"data_samples", static_cast<double>(cfg.data_samples)},
                      {"mc_samples", static_cast<double>(cfg.mc_samples)},
                      {"epochs", static_cast<double>(cfg.train.epochs)},
                      {"train_random", cfg.train_random ? 1.0 : 0.0},
                      {"seed", static_cast<double>(cfg.seed)}};
    Table table{"variance", {"repeat", "width", "variance", "variance_se"}, {}};
    std::vector<double> slopes;
    const std::vector<double> xs(cfg.widths.begin(), cfg.widths.end());
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        std::vector<double> ys(var.begin() + static_cast<std::ptrdiff_t>(r * nw),
                               var.begin() + static_cast<std::ptrdiff_t>((r + 1) * nw));
        for (std::size_t k = 0; k < nw; ++k)
            table.rows.push_back({static_cast<double>(r), xs[k], ys[k], var_se[r * nw + k]});
        slopes.push_back(loglog_slope(xs, ys));
    }
    rep.tables.push_back(std::move(table));
    const Metric slope = summarize("slope", slopes);
    rep.metrics.push_back(slope);

    const std::string detail = "slope " + fmt(slope.value) + " +- " + fmt(slope.std_error) + " over " +
                               std::to_string(cfg.repeats) + " repeats";
    switch (cfg.mode) {
    case WidthSweepMode::duplication:
        rep.assertions.push_back({"duplication slope = -1 +- 0.1", std::abs(slope.value + 1.0) <= 0.1, detail});
        break;
    case WidthSweepMode::regularized:
        rep.assertions.push_back({"regularized slope in [-1.3, -0.6]", slope.value >= -1.3 && slope.value <= -0.6, detail});
        break;
    case WidthSweepMode::random:
        rep.assertions.push_back({"random-init slope in [-0.2, 0.2]", std::abs(slope.value) <= 0.2, detail});
        break;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Regularizer comparison
// ---------------------------------------------------------------------------

TrainConfig RegularizerComparisonConfig::default_train() {
    TrainConfig t;
    t.epochs = 300;
    t.batch_size = 10;
    t.learning_rate = 0.3;
    t.lr_scaling = LrScaling::mean_field;
    return t;
}

ExperimentReport run_regularizer_comparison(const RegularizerComparisonConfig& cfg) {
    if (cfg.repeats < 3) throw DomainError("regularizer comparison: statistical assertions need at least 3 repeats");
    if (cfg.lambda_sweep.empty() || cfg.lambda_sweep.front() != 0.0)
        throw DomainError("regularizer comparison: the lambda sweep must start at 0");
    const CrashModel crash{{0.0, cfg.p_inference, 0.0}};
    const LossConfig loss{};
    // Per repeat: baseline, dropout, lambda, then the lambda sweep.
    const std::size_t per = 3 + cfg.lambda_sweep.size();
    struct Eval {
        double var = 0.0, var_se = 0.0, crashing_mae = 0.0, clean_mae = 0.0;
    };
    std::vector<Eval> evals(cfg.repeats * per);

    parallel_for(cfg.repeats * per, resolve_threads(cfg.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t run = begin; run < end; ++run) {
            const std::size_t r = run / per, k = run % per;
            const std::uint64_t seed = cfg.seed * 1000003 + r;
            const Dataset data = synth_dataset({SynthKind::smooth_1d, cfg.data_samples, 0.0, seed});
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            tc.loss = loss;
            tc.reg.layers = {1};
            if (k == 1) tc.dropout_p_train = crash;
            if (k == 2) tc.reg.lambda = cfg.lambda;
            if (k >= 3) tc.reg.lambda = cfg.lambda_sweep[k - 3];
            const Network net = train(init_continuous(std::vector<Index>{1, cfg.hidden, 1}, seed), data, tc).net;
            const ErrorMoments m = monte_carlo_dataset_moments(net, data, crash, loss, cfg.mc_samples, seed ^ 0xc0ffeeULL, 1);
            Eval& e = evals[run];
            e.var = m.variance;
            e.var_se = m.variance_std_error;
            e.crashing_mae = crashing_mae(net, data, crash, cfg.mc_samples, seed ^ 0xc0ffeeULL, 1).mean;
            e.clean_mae = crashing_mae(net, data, CrashModel{{0.0, 0.0, 0.0}}, 1, seed, 1).mean;
        }
    });

    ExperimentReport rep;
    rep.name = "regularizer-comparison";
    rep.parameters = {{"p_inference", cfg.p_inference},
                      {"lambda", cfg.lambda},
                      {"hidden", static_cast<double>(cfg.hidden)},
                      {"data_samples", static_cast<double>(cfg.data_samples)},
                      {"repeats", static_cast<double>(cfg.repeats)},
                      {"mc_samples", static_cast<double>(cfg.mc_samples)},
                      {"epochs", static_cast<double>(cfg.train.epochs)},
                      {"seed", static_cast<double>(cfg.seed)}};

    Table paired{"paired", {"repeat", "model", "variance", "variance_se", "crashing_mae", "clean_mae"}, {}};
    Table sweep{"lambda_sweep", {"repeat", "lambda", "variance", "variance_se", "crashing_mae", "clean_mae"}, {}};
    // Pooled over repeats: mean variance and the Monte Carlo standard error of that mean.
    std::vector<double> mean_var(per, 0.0), se2(per, 0.0), mean_clean(per, 0.0);
    const double nr = static_cast<double>(cfg.repeats);
    for (std::size_t r = 0; r < cfg.repeats; ++r)
        for (std::size_t k = 0; k < per; ++k) {
            const Eval& e = evals[r * per + k];
            mean_var[k] += e.var / nr;
            se2[k] += e.var_se * e.var_se / (nr * nr);
            mean_clean[k] += e.clean_mae / nr;
            if (k < 3)
                paired.rows.push_back({static_cast<double>(r), static_cast<double>(k), e.var, e.var_se, e.crashing_mae, e.clean_mae});
            else
                sweep.rows.push_back({static_cast<double>(r), cfg.lambda_sweep[k - 3], e.var, e.var_se, e.crashing_mae, e.clean_mae});
        }
    rep.tables = {std::move(paired), std::move(sweep)};
    const char* names[] = {"baseline", "dropout", "lambda"};
    for (std::size_t k = 0; k < 3; ++k) rep.metrics.push_back({std::string("variance_") + names[k], mean_var[k], std::sqrt(se2[k]), cfg.repeats});
    for (std::size_t k = 3; k < per; ++k)
        rep.metrics.push_back({"variance_lambda_" + fmt(cfg.lambda_sweep[k - 3]), mean_var[k], std::sqrt(se2[k]), cfg.repeats});

    const auto beats = [&](std::size_t k) {
        const double gap = mean_var[0] - mean_var[k];
        const double se = std::sqrt(se2[0] + se2[k]);
        return std::make_pair(gap > 4.0 * se, "gap " + fmt(gap) + ", 4 SE = " + fmt(4.0 * se));
    };
    const auto [dropout_ok, dropout_detail] = beats(1);
    const auto [lambda_ok, lambda_detail] = beats(2);
    rep.assertions.push_back({"dropout beats baseline on variance (4 SE)", dropout_ok, dropout_detail});
    rep.assertions.push_back({"lambda regularization beats baseline on variance (4 SE)", lambda_ok, lambda_detail});

    bool reproduces = true;
    for (std::size_t r = 0; r < cfg.repeats; ++r)
        reproduces = reproduces && evals[r * per].var == evals[r * per + 3].var;
    rep.assertions.push_back({"lambda = 0 reproduces the baseline", reproduces, ""});

    // Decreasing variance up to the point where clean MAE doubles.
    std::size_t last = 3;
    while (last + 1 < per && mean_clean[last + 1] <= 2.0 * mean_clean[3] + 1e-12) ++last;
    bool decreasing = true;
    for (std::size_t k = 3; k < last; ++k)
        decreasing = decreasing && mean_var[k + 1] <= mean_var[k] + 4.0 * std::sqrt(se2[k] + se2[k + 1]);
    const bool falls = last > 3 && mean_var[last] < mean_var[3];
    rep.assertions.push_back({"variance decreases with lambda before accuracy collapse", decreasing && falls,
                              "checked up to lambda = " + fmt(cfg.lambda_sweep[last - 3])});
    return rep;
}

// ---------------------------------------------------------------------------
// Bound table
// ---------------------------------------------------------------------------

ExperimentReport run_bound_table(const BoundTableConfig& cfg) {
    if (cfg.widths.size() < 3) throw DomainError("bound table: need at least one hidden layer");
    if (cfg.networks * cfg.inputs < 2) throw DomainError("bound table: need at least two rows per p for rank losses");
    const auto depth = static_cast<Index>(cfg.widths.size()) - 1;
    const std::size_t cells = cfg.networks * cfg.inputs;
    const std::size_t np = cfg.p_grid.size();

    enum Col { net_c, input_c, p_c, ex_mean, ex_std, b1_c, b2_c, b3_mean, b3_std, b4_mean, b4_std,
               b3_rel_mean, b4_rel_mean, b3_rel_std, b4_rel_std, n_cols };
    std::vector<std::array<double, n_cols>> rows(cells * np);

    parallel_for(cells, resolve_threads(cfg.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t cell = begin; cell < end; ++cell) {
            const std::size_t ni = cell / cfg.inputs, xi = cell % cfg.inputs;
            const Network net = random_smooth_net(cfg.seed * 1000003 + ni, cfg.widths);
            RngStream rng(cfg.seed ^ 0x696e707574ULL, cell);
            Vector x(cfg.widths.front());
            for (Index i = 0; i < x.size(); ++i) x[i] = 2.0 * rng.uniform() - 1.0;
            for (std::size_t k = 0; k < np; ++k) {
                std::vector<double> p(static_cast<std::size_t>(depth) + 1, 0.0);
                for (Index l = 1; l < depth; ++l) p[static_cast<std::size_t>(l)] = cfg.p_grid[k];
                const CrashModel crash{p};
                const Head head = Head::output(0);
                const ErrorMoments ex = exact_moments(net, x, crash, head, {}, 1);
                const BoundReport b3 = bound_taylor(net, x, crash, head);
                const BoundReport b4 = bound_single_crash(net, x, crash, head);
                auto& row = rows[cell * np + k];
                row[net_c] = static_cast<double>(ni);
                row[input_c] = static_cast<double>(xi);
                row[p_c] = cfg.p_grid[k];
                row[ex_mean] = ex.mean;
                row[ex_std] = std::sqrt(ex.variance);
                row[b1_c] = bound_spectral(net, x, crash).mean;
                row[b2_c] = bound_absolute(net, x, crash).mean;
                row[b3_mean] = b3.mean;
                row[b3_std] = std::sqrt(*b3.variance);
                row[b4_mean] = b4.mean;
                row[b4_std] = std::sqrt(*b4.variance);
                const auto rel = [](double est, double truth) { return std::abs(est - truth) / std::abs(truth); };
                row[b3_rel_mean] = rel(row[b3_mean], row[ex_mean]);
                row[b4_rel_mean] = rel(row[b4_mean], row[ex_mean]);
                row[b3_rel_std] = rel(row[b3_std], row[ex_std]);
                row[b4_rel_std] = rel(row[b4_std], row[ex_std]);
            }
        }
    });

    ExperimentReport rep;
    rep.name = "bound-table";
    rep.parameters = {{"networks", static_cast<double>(cfg.networks)},
                      {"inputs", static_cast<double>(cfg.inputs)},
                      {"seed", static_cast<double>(cfg.seed)}};
    Table table{"bounds",
                {"network", "input", "p", "exact_mean", "exact_std", "b1", "b2", "b3_mean", "b3_std", "b4_mean", "b4_std",
                 "b3_rel_err_mean", "b4_rel_err_mean", "b3_rel_err_std", "b4_rel_err_std"},
                {}};
    for (const auto& row : rows) table.rows.emplace_back(row.begin(), row.end());
    rep.tables.push_back(std::move(table));

    Table ranks{"rank_loss", {"p", "b1", "b2", "b3_mean", "b4_mean", "b3_std", "b4_std"}, {}};
    std::size_t b4_worse = 0;
    bool separated = true;
    std::vector<double> b3_rel_by_p(np), b3_rel_std_by_p(np);
    for (std::size_t k = 0; k < np; ++k) {
        std::vector<double> truth, truth_std, c1, c2, c3, c4, s3, s4, rel3, rel3_std, rel4;
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const auto& row = rows[cell * np + k];
            truth.push_back(std::abs(row[ex_mean]));
            truth_std.push_back(row[ex_std]);
            c1.push_back(row[b1_c]);
            c2.push_back(row[b2_c]);
            c3.push_back(std::abs(row[b3_mean]));
            c4.push_back(std::abs(row[b4_mean]));
            s3.push_back(row[b3_std]);
            s4.push_back(row[b4_std]);
            if (row[b4_rel_mean] > row[b3_rel_mean]) ++b4_worse;
            rel3.push_back(row[b3_rel_mean]);
            rel3_std.push_back(row[b3_rel_std]);
            rel4.push_back(row[b4_rel_mean]);
        }
        // Medians: rows whose exact mean is near zero blow up the relative error.
        b3_rel_by_p[k] = median(rel3);
        b3_rel_std_by_p[k] = median(rel3_std);
        const double r1 = rank_loss(c1, truth), r2 = rank_loss(c2, truth), r3 = rank_loss(c3, truth),
                     r4 = rank_loss(c4, truth);
        ranks.rows.push_back({cfg.p_grid[k], r1, r2, r3, r4, rank_loss(s3, truth_std), rank_loss(s4, truth_std)});
        rep.metrics.push_back({"rank_loss_b1_p" + fmt(cfg.p_grid[k]), r1, 0.0, cells});
        rep.metrics.push_back({"rank_loss_b2_p" + fmt(cfg.p_grid[k]), r2, 0.0, cells});
        rep.metrics.push_back({"rank_loss_b3_p" + fmt(cfg.p_grid[k]), r3, 0.0, cells});
        rep.metrics.push_back({"rank_loss_b4_p" + fmt(cfg.p_grid[k]), r4, 0.0, cells});
        rep.metrics.push_back({"b3_median_rel_err_mean_p" + fmt(cfg.p_grid[k]), b3_rel_by_p[k], 0.0, cells});
        rep.metrics.push_back({"b4_median_rel_err_mean_p" + fmt(cfg.p_grid[k]), median(rel4), 0.0, cells});
        rep.metrics.push_back({"b3_median_rel_err_std_p" + fmt(cfg.p_grid[k]), b3_rel_std_by_p[k], 0.0, cells});
        separated = separated && std::min(r1, r2) > std::max(r3, r4);
    }
    rep.tables.push_back(std::move(ranks));

    rep.assertions.push_back({"b4 relative error <= b3 relative error on every row", b4_worse == 0,
                              std::to_string(b4_worse) + " of " + std::to_string(rows.size()) + " rows violate"});
    rep.assertions.push_back({"b1/b2 rank loss above b3/b4 rank loss at every p", separated, ""});
    if (np >= 2) {
        const auto lo = static_cast<std::size_t>(std::min_element(cfg.p_grid.begin(), cfg.p_grid.end()) - cfg.p_grid.begin());
        const auto hi = static_cast<std::size_t>(std::max_element(cfg.p_grid.begin(), cfg.p_grid.end()) - cfg.p_grid.begin());
        rep.assertions.push_back({"b3 relative error of the mean shrinks as p decreases", b3_rel_by_p[lo] < b3_rel_by_p[hi],
                                  "median " + fmt(b3_rel_by_p[lo]) + " at p = " + fmt(cfg.p_grid[lo]) + " vs " +
                                      fmt(b3_rel_by_p[hi]) + " at p = " + fmt(cfg.p_grid[hi])});
        rep.assertions.push_back({"b3 relative error of the std shrinks as p decreases",
                                  b3_rel_std_by_p[lo] < b3_rel_std_by_p[hi],
                                  "median " + fmt(b3_rel_std_by_p[lo]) + " vs " + fmt(b3_rel_std_by_p[hi])});
    }
    return rep;
}

} // namespace crashcert
