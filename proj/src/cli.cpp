#include "crashcert/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crashcert/certifier.hpp"
#include "crashcert/experiments.hpp"
#include "crashcert/io.hpp"
#include "crashcert/synthetic.hpp"

#ifndef CRASHCERT_VERSION
#define CRASHCERT_VERSION "unknown"
#endif

namespace crashcert {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct Common {
    std::string model;
    std::string data;
    std::string input;
    std::string p;
    std::optional<double> epsilon;
    std::optional<double> delta;
    std::size_t samples = 10000;
    std::uint64_t seed = 0;
    std::string out;
    std::string format = "json";
    unsigned threads = 0;
    Index head = 0;
    std::string loss = "auto";
};

struct TrainOpts {
    std::string widths;
    std::string init = "continuous";
    std::string hidden = "sigmoid";
    std::size_t epochs = 100;
    std::size_t batch = 16;
    double lr = 0.1;
    std::string lr_scaling = "uniform";
    double lambda = 0.0, mu = 0.0, psi_deriv = 0.0, psi_smooth = 0.0, nu = 0.0;
    std::string dropout;
    std::string model_out;
};

struct CertifyOpts {
    double complexity_C = 0.0;
    std::size_t max_iterations = 50;
    Index width_increment = 100;
    double q_threshold = 1e-2;
    bool no_delta0 = false;
    std::optional<double> alpha;
    std::size_t validate_trials = 0;
};

struct Ctx {
    Common c;
    TrainOpts t;
    CertifyOpts cert;
    std::string method = "b3";
    std::optional<double> d12;
    Index replicas = 3;
    double base = 1.0 / 3.0;
    std::string experiment;
    std::optional<std::size_t> repeats;
    std::size_t check_samples = 200;
    std::string mode = "regularized";
    std::string replay_path;
    std::vector<std::string> argv;
    std::ostream* out = nullptr;
};

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

Network load_model(const Common& c) {
    if (c.model.empty()) throw SchemaError("--model is required");
    return read_model(c.model);
}

Dataset load_data(const Common& c, std::optional<Index> input_dim) {
    if (c.data.empty()) throw SchemaError("--data is required");
    return read_dataset(c.data, input_dim);
}

CrashModel crash_for_depth(Index depth, const std::string& text) {
    if (text.empty()) throw SchemaError("--p is required");
    const std::vector<double> p = parse_double_list(text);
    CrashModel crash;
    if (p.size() == 1) {
        crash.p.assign(static_cast<std::size_t>(depth) + 1, p[0]);
        crash.p.back() = 0.0;
    } else if (static_cast<Index>(p.size()) == depth + 1) {
        crash.p = p;
    } else {
        throw SchemaError("--p: expected 1 or " + std::to_string(depth + 1) + " values (layers 0.." + std::to_string(depth) +
                          "), got " + std::to_string(p.size()));
    }
    for (std::size_t l = 0; l < crash.p.size(); ++l)
        if (!(crash.p[l] >= 0.0 && crash.p[l] <= 1.0))
            throw SchemaError("--p: entry " + std::to_string(l) + " is outside [0, 1]");
    return crash;
}

CrashModel load_crash(const Network& net, const Common& c) {
    CrashModel crash = crash_for_depth(net.depth(), c.p);
    crash.validate(net);
    return crash;
}

Vector load_input(const Network& net, const Common& c) {
    const std::vector<double> v = parse_double_list(c.input);
    if (static_cast<Index>(v.size()) != net.input_dim())
        throw SchemaError("--input: expected " + std::to_string(net.input_dim()) + " values, got " + std::to_string(v.size()));
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

Head load_head(const Network& net, const Common& c) {
    if (c.head < 0 || c.head >= net.output_dim())
        throw SchemaError("--head: output component must lie in [0, " + std::to_string(net.output_dim() - 1) + "]");
    return Head::output(c.head);
}

LossConfig load_loss(const Common& c) {
    if (c.loss == "auto") {
        if (c.data.rfind("synth:", 0) == 0) return default_loss_for(parse_synth_spec(c.data).kind);
        return LossConfig{};
    }
    if (c.loss == "mse") return LossConfig{LossKind::bounded_mse, 1.0};
    if (c.loss == "margin") return LossConfig{LossKind::bounded_margin, 1.0};
    throw SchemaError("--loss: expected auto, mse or margin");
}

double require(const std::optional<double>& v, const char* flag) {
    if (!v) throw SchemaError(std::string(flag) + " is required");
    return *v;
}

std::vector<Index> parse_widths(const std::string& text) {
    if (text.empty()) throw SchemaError("--widths is required");
    std::vector<Index> out;
    for (double v : parse_double_list(text)) {
        if (!(v >= 1.0) || v != std::floor(v)) throw SchemaError("--widths: entries must be positive integers");
        out.push_back(static_cast<Index>(v));
    }
    if (out.size() < 2) throw SchemaError("--widths: need at least an input and an output width");
    return out;
}

LrScaling parse_lr_scaling(const std::string& s) {
    if (s == "uniform") return LrScaling::uniform;
    if (s == "mean-field") return LrScaling::mean_field;
    throw SchemaError("--lr-scaling: expected uniform or mean-field");
}

TrainConfig train_config(const Ctx& ctx) {
    TrainConfig tc;
    tc.epochs = ctx.t.epochs;
    tc.batch_size = ctx.t.batch;
    tc.learning_rate = ctx.t.lr;
    tc.lr_scaling = parse_lr_scaling(ctx.t.lr_scaling);
    tc.reg.lambda = ctx.t.lambda;
    tc.reg.mu = ctx.t.mu;
    tc.reg.psi_deriv = ctx.t.psi_deriv;
    tc.reg.psi_smooth = ctx.t.psi_smooth;
    tc.reg.nu = ctx.t.nu;
    tc.loss = load_loss(ctx.c);
    tc.seed = ctx.c.seed;
    return tc;
}

unsigned threads_of(const Common& c) { return resolve_threads(c.threads); }

// ---------------------------------------------------------------------------
// JSON pieces
// ---------------------------------------------------------------------------

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json moments_json(const ErrorMoments& m) {
    json j{{"mean", num(m.mean)},
           {"variance", num(m.variance)},
           {"estimator", m.exact ? "exact-enumeration" : "monte-carlo"},
           {"samples", m.samples}};
    if (!m.exact) {
        j["std_error"] = num(m.std_error);
        j["variance_std_error"] = num(m.variance_std_error);
    }
    if (m.tail_epsilon) j["tail"] = {{"epsilon", *m.tail_epsilon}, {"frequency", num(*m.tail_freq)}};
    return j;
}

json tail_json(const TailEstimate& t) {
    return {{"delta_hat", num(t.delta_hat)}, {"std_error", num(t.std_error)}, {"trials", t.trials}, {"hits", t.hits},
            {"estimator", "monte-carlo"}};
}

json vector_json(const Vector& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
    return a;
}

json bound_json(const BoundReport& b) {
    json j{{"method", std::string(to_string(b.method))}, {"mean", num(b.mean)}, {"estimator", "analytic"}};
    if (b.mean_vector.size() > 0) j["mean_vector"] = vector_json(b.mean_vector);
    if (b.variance) j["variance"] = num(*b.variance);
    if (b.worst_case) j["worst_case"] = num(*b.worst_case);
    if (b.inf_norm_mean) j["inf_norm_mean"] = num(*b.inf_norm_mean);
    if (b.lipschitz_product) j["lipschitz_product"] = num(*b.lipschitz_product);
    if (b.remainder) {
        j["remainder"] = {{"d12", num(b.remainder->d12)},
                          {"mean_magnitude", num(b.remainder->mean_magnitude)},
                          {"variance_magnitude", num(b.remainder->variance_magnitude)}};
    }
    json layers = json::array();
    for (const auto& l : b.layers) layers.push_back({{"layer", l.layer}, {"p", l.p}, {"mean", num(l.mean)}, {"variance", num(l.variance)}, {"r", num(l.r)}});
    if (!layers.empty()) j["layers"] = std::move(layers);
    if (!b.warnings.empty()) j["warnings"] = b.warnings;
    return j;
}

json certificate_json(const Certificate& c) {
    return {{"epsilon", c.epsilon}, {"delta", num(c.delta)},   {"t", num(c.t)},
            {"mean", num(c.mean)},  {"variance", num(c.variance)}, {"delta0", num(c.delta0)},
            {"method", std::string(to_string(c.method))}};
}

json delta0_json(const std::vector<LayerDelta0>& layers) {
    json a = json::array();
    for (const auto& d : layers)
        a.push_back({{"layer", d.layer}, {"width", d.width}, {"p", d.p}, {"q", num(d.q)}, {"alpha", num(d.alpha)},
                     {"delta0", num(d.delta0)}});
    return a;
}

json reg_json(const RegWeights& r) {
    return {{"lambda", r.lambda}, {"mu", r.mu}, {"psi_deriv", r.psi_deriv}, {"psi_smooth", r.psi_smooth}, {"nu", r.nu},
            {"layers", r.layers}};
}

json table_json(const Table& t) {
    json rows = json::array();
    for (const auto& row : t.rows) {
        json r = json::array();
        for (double v : row) r.push_back(num(v));
        rows.push_back(std::move(r));
    }
    return {{"name", t.name}, {"columns", t.columns}, {"rows", std::move(rows)}};
}

std::string timestamp() {
    std::time_t now = std::time(nullptr);
    // Reproducible-build convention: a fixed epoch makes reports byte-identical.
    if (const char* fixed = std::getenv("SOURCE_DATE_EPOCH")) now = static_cast<std::time_t>(std::strtoll(fixed, nullptr, 10));
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

struct Report {
    std::string command;
    json config = json::object();
    json results = json::object();
    std::vector<Table> tables;
};

void emit(const Ctx& ctx, const Report& rep) {
    if (ctx.c.out.empty()) return;
    json doc;
    doc["schema_version"] = kReportSchemaVersion;
    doc["command"] = rep.command;
    doc["argv"] = ctx.argv;
    doc["config"] = rep.config;
    doc["results"] = rep.results;
    if (!rep.tables.empty()) {
        doc["tables"] = json::array();
        for (const Table& t : rep.tables) doc["tables"].push_back(table_json(t));
    }
    doc["provenance"] = {{"tool", "crashcert"},
                         {"version", CRASHCERT_VERSION},
                         {"timestamp", timestamp()},
                         {"seed", ctx.c.seed},
                         {"threads", threads_of(ctx.c)}};
    const ReportFormat format = ctx.c.format == "csv" ? ReportFormat::csv : ReportFormat::json;
    for (const auto& p : write_report(ctx.c.out, doc.dump(2) + "\n", rep.tables, format))
        *ctx.out << "wrote " << p.string() << "\n";
}

json common_config(const Common& c) {
    json j{{"seed", c.seed}, {"threads", threads_of(c)}};
    if (!c.model.empty()) j["model"] = c.model;
    if (!c.data.empty()) j["data"] = c.data;
    if (!c.p.empty()) j["p"] = c.p;
    if (!c.input.empty()) j["input"] = c.input;
    if (c.epsilon) j["epsilon"] = *c.epsilon;
    if (c.delta) j["delta"] = *c.delta;
    return j;
}

std::string g(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_inspect(Ctx& ctx) {
    const Network net = load_model(ctx.c);
    std::ostream& o = *ctx.out;
    Report rep{"inspect", common_config(ctx.c), {}, {}};
    rep.results["widths"] = net.widths();
    rep.results["parameters"] = net.parameter_count();
    Table t{"layers", {"layer", "rows", "cols", "norm_inf", "norm_one", "spectral_upper", "spectral_lower", "q_outgoing", "c1", "c2", "c3"}, {}};
    json layers = json::array();
    o << "network " << net.depth() << " layers, widths";
    for (Index w : net.widths()) o << " " << w;
    o << ", " << net.parameter_count() << " parameters\n";
    for (Index l = 1; l <= net.depth(); ++l) {
        const Layer& layer = net.layer(l);
        const Matrix& w = layer.weights;
        const SpectralEstimate s = spectral_norm_estimate(w);
        const double q = l < net.depth() ? layer_q_factor(net, l) : 1.0;
        const double c1 = continuity_c1(w), c2 = continuity_c2(w), c3 = continuity_c3(w, default_smoothing_sigma(w));
        layers.push_back({{"layer", l},
                          {"activation", std::string(to_string(layer.activation))},
                          {"shape", {w.rows(), w.cols()}},
                          {"norm_inf", matrix_norm(w, NormKind::inf)},
                          {"norm_one", matrix_norm(w, NormKind::one)},
                          {"spectral_upper", s.upper},
                          {"spectral_lower", s.lower},
                          {"q_outgoing", q},
                          {"c1", c1},
                          {"c2", c2},
                          {"c3", c3}});
        t.rows.push_back({static_cast<double>(l), static_cast<double>(w.rows()), static_cast<double>(w.cols()),
                          matrix_norm(w, NormKind::inf), matrix_norm(w, NormKind::one), s.upper, s.lower, q, c1, c2, c3});
        o << "  W" << l << " " << w.rows() << "x" << w.cols() << " " << to_string(layer.activation) << "  ||W||_2 <= "
          << g(s.upper) << "  ||W||_inf " << g(matrix_norm(w, NormKind::inf)) << "  q " << g(q) << "  C1 " << g(c1)
          << "  C2 " << g(c2) << "  C3 " << g(c3) << "\n";
    }
    rep.results["layers"] = std::move(layers);
    if (!ctx.c.p.empty()) {
        const CrashModel crash = load_crash(net, ctx.c);
        rep.results["crashable_neurons"] = crashable_neurons(net, crash);
        const auto d0 = layer_delta0(net, crash, std::nullopt);
        rep.results["delta0_layers"] = delta0_json(d0);
        rep.results["delta0"] = total_delta0(d0);
        o << "crashable neurons " << crashable_neurons(net, crash) << ", delta0 " << g(total_delta0(d0)) << "\n";
    }
    rep.tables.push_back(std::move(t));
    emit(ctx, rep);
    return kExitOk;
}

int cmd_inject(Ctx& ctx) {
    const Network net = load_model(ctx.c);
    const CrashModel crash = load_crash(net, ctx.c);
    Report rep{"inject", common_config(ctx.c), {}, {}};
    rep.config["samples"] = ctx.c.samples;
    std::ostream& o = *ctx.out;
    if (!ctx.c.input.empty()) {
        const Head head = load_head(net, ctx.c);
        rep.config["head"] = ctx.c.head;
        const ErrorMoments m = monte_carlo_moments(net, load_input(net, ctx.c), crash, head,
                                                   {ctx.c.samples, ctx.c.seed, threads_of(ctx.c), ctx.c.epsilon});
        rep.results["moments"] = moments_json(m);
        o << "E delta " << g(m.mean) << " +- " << g(m.std_error) << ", Var delta " << g(m.variance) << " +- "
          << g(m.variance_std_error) << " (" << m.samples << " samples)\n";
        if (m.tail_freq) o << "P{delta >= " << g(*m.tail_epsilon) << "} = " << g(*m.tail_freq) << "\n";
    } else {
        const Dataset data = load_data(ctx.c, net.input_dim());
        const LossConfig loss = load_loss(ctx.c);
        rep.config["loss"] = std::string(to_string(loss.kind));
        rep.config["samples_per_input"] = ctx.c.samples;
        const ErrorMoments m =
            monte_carlo_dataset_moments(net, data, crash, loss, ctx.c.samples, ctx.c.seed, threads_of(ctx.c));
        rep.results["moments"] = moments_json(m);
        o << "loss increase: E " << g(m.mean) << " +- " << g(m.std_error) << ", Var " << g(m.variance) << " ("
          << m.samples << " samples over " << data.size() << " inputs)\n";
        if (ctx.c.epsilon) {
            const TailEstimate t =
                empirical_tail(net, data, crash, loss, *ctx.c.epsilon, ctx.c.samples, ctx.c.seed, threads_of(ctx.c));
            rep.results["tail"] = tail_json(t);
            o << "P{delta >= " << g(*ctx.c.epsilon) << "} = " << g(t.delta_hat) << " +- " << g(t.std_error) << "\n";
        }
    }
    emit(ctx, rep);
    return kExitOk;
}

int cmd_enumerate(Ctx& ctx) {
    const Network net = load_model(ctx.c);
    const CrashModel crash = load_crash(net, ctx.c);
    const Head head = load_head(net, ctx.c);
    Report rep{"enumerate", common_config(ctx.c), {}, {}};
    rep.config["head"] = ctx.c.head;
    const ErrorMoments m = exact_moments(net, load_input(net, ctx.c), crash, head, {}, threads_of(ctx.c));
    rep.results["moments"] = moments_json(m);
    rep.results["crashable_neurons"] = crashable_neurons(net, crash);
    *ctx.out << "exact E delta " << g(m.mean) << ", Var delta " << g(m.variance) << " over "
             << crashable_neurons(net, crash) << " crashable neurons\n";
    emit(ctx, rep);
    return kExitOk;
}

int cmd_bound(Ctx& ctx) {
    const Network net = load_model(ctx.c);
    const CrashModel crash = load_crash(net, ctx.c);
    const BoundMethod method = bound_method_from_string(ctx.method);
    Report rep{"bound", common_config(ctx.c), {}, {}};
    rep.config["method"] = ctx.method;
    BoundReport b;
    if (!ctx.c.input.empty()) {
        const Vector x = load_input(net, ctx.c);
        const Head head = load_head(net, ctx.c);
        rep.config["head"] = ctx.c.head;
        switch (method) {
        case BoundMethod::b1: b = bound_spectral(net, x, crash); break;
        case BoundMethod::b2: b = bound_absolute(net, x, crash, ctx.c.head); break;
        case BoundMethod::b3: b = bound_taylor(net, x, crash, head, ctx.d12); break;
        case BoundMethod::b4: b = bound_single_crash(net, x, crash, head); break;
        }
    } else {
        if (method != BoundMethod::b3) throw SchemaError("bound: --data is only supported with --method b3; use --input");
        const Dataset data = load_data(ctx.c, net.input_dim());
        const LossConfig loss = load_loss(ctx.c);
        rep.config["loss"] = std::string(to_string(loss.kind));
        b = bound_taylor_dataset(net, data, crash, loss);
    }
    rep.results["bound"] = bound_json(b);
    std::ostream& o = *ctx.out;
    o << ctx.method << ": mean " << g(b.mean);
    if (b.variance) o << ", variance " << g(*b.variance);
    if (b.worst_case) o << ", worst case " << g(*b.worst_case);
    o << "\n";
    for (const auto& w : b.warnings) o << "warning: " << w << "\n";
    emit(ctx, rep);
    return kExitOk;
}

int cmd_check_ft(Ctx& ctx) {
    const Network net = load_model(ctx.c);
    const CrashModel crash = load_crash(net, ctx.c);
    const Dataset data = load_data(ctx.c, net.input_dim());
    const LossConfig loss = load_loss(ctx.c);
    const double eps = require(ctx.c.epsilon, "--epsilon");
    CheckOptions opts;
    opts.include_delta0 = !ctx.cert.no_delta0;
    opts.alpha = ctx.cert.alpha;
    opts.samples_per_input = ctx.check_samples;
    opts.seed = ctx.c.seed;
    opts.threads = threads_of(ctx.c);
    Report rep{"check-ft", common_config(ctx.c), {}, {}};
    rep.config["loss"] = std::string(to_string(loss.kind));
    rep.config["include_delta0"] = opts.include_delta0;
    rep.config["samples_per_input"] = ctx.check_samples;
    if (opts.alpha) rep.config["alpha"] = *opts.alpha;
    std::ostream& o = *ctx.out;
    FtCheck chk;
    try {
        chk = check_ft(net, data, crash, loss, eps, opts);
    } catch (const InfeasibleCertificate& e) {
        rep.results["status"] = "infeasible";
        rep.results["reason"] = e.what();
        o << e.what() << "\n";
        emit(ctx, rep);
        return kExitInfeasible;
    }
    rep.results["certificate"] = certificate_json(chk.certificate);
    rep.results["moments"] = bound_json(chk.moments);
    rep.results["delta0_layers"] = delta0_json(chk.layers);
    rep.results["q_min"] = num(chk.q_min);
    if (chk.empirical) rep.results["empirical"] = tail_json(*chk.empirical);
    const bool met = !ctx.c.delta || chk.certificate.delta <= *ctx.c.delta;
    rep.results["status"] = met ? "certified" : "failed";
    o << "(" << g(eps) << ", " << g(chk.certificate.delta) << ")-fault tolerant";
    if (ctx.c.delta) o << (met ? ", meets" : ", misses") << " target delta " << g(*ctx.c.delta);
    o << "\n  E delta " << g(chk.certificate.mean) << ", Var delta " << g(chk.certificate.variance) << ", delta0 "
      << g(chk.certificate.delta0) << ", q_min " << g(chk.q_min) << "\n";
    if (chk.empirical)
        o << "  empirical P{delta >= eps} = " << g(chk.empirical->delta_hat) << " +- " << g(chk.empirical->std_error) << "\n";
    emit(ctx, rep);
    return met ? kExitOk : kExitInfeasible;
}

int cmd_median_plan(Ctx& ctx) {
    const double target = require(ctx.c.delta, "--delta");
    Report rep{"median-plan", {{"base", ctx.base}, {"delta", target}}, {}, {}};
    const Index r = median_repetitions(ctx.base, target);
    rep.results["replicas"] = r;
    rep.results["stated_bound"] = median_failure_bound(ctx.base, r);
    rep.results["exact_independent"] = median_failure_exact(ctx.base, r);
    rep.results["chernoff"] = median_failure_chernoff(ctx.base, r);
    Table t{"plan", {"replicas", "stated_bound", "exact_independent", "chernoff"}, {}};
    for (Index k = 1; k <= r; k += 2)
        t.rows.push_back({static_cast<double>(k), median_failure_bound(ctx.base, k), median_failure_exact(ctx.base, k),
                          median_failure_chernoff(ctx.base, k)});
    rep.tables.push_back(std::move(t));
    *ctx.out << "R = " << r << " replicas: stated bound " << g(median_failure_bound(ctx.base, r))
             << ", exact (independent replicas) " << g(median_failure_exact(ctx.base, r)) << ", Chernoff "
             << g(median_failure_chernoff(ctx.base, r)) << "\n";
    emit(ctx, rep);
    return kExitOk;
}

Network initial_network(const Ctx& ctx, std::size_t input_dim, std::size_t output_dim) {
    if (!ctx.c.model.empty()) return load_model(ctx.c);
    const std::vector<Index> widths = parse_widths(ctx.t.widths);
    if (static_cast<std::size_t>(widths.front()) != input_dim || static_cast<std::size_t>(widths.back()) != output_dim)
        throw SchemaError("--widths: first and last widths must match the data (" + std::to_string(input_dim) + " inputs, " +
                          std::to_string(output_dim) + " outputs)");
    const Activation hidden = activation_from_string(ctx.t.hidden);
    if (ctx.t.init == "continuous") return init_continuous(widths, ctx.c.seed, hidden);
    if (ctx.t.init == "random") return init_random(widths, ctx.c.seed, hidden);
    throw SchemaError("--init: expected continuous or random");
}

std::size_t output_dim_for(const Dataset& data, const LossConfig& loss) {
    if (loss.kind == LossKind::bounded_margin && data.front().target.size() == 1) {
        double k = 0.0;
        for (const Example& ex : data) k = std::max(k, ex.target[0]);
        return static_cast<std::size_t>(k) + 1;
    }
    return static_cast<std::size_t>(data.front().target.size());
}

int cmd_train(Ctx& ctx) {
    const Dataset data = load_data(ctx.c, std::nullopt);
    TrainConfig tc = train_config(ctx);
    Network init = initial_network(ctx, static_cast<std::size_t>(data.front().x.size()), output_dim_for(data, tc.loss));
    if (!ctx.t.dropout.empty()) tc.dropout_p_train = crash_for_depth(init.depth(), ctx.t.dropout);
    Report rep{"train", common_config(ctx.c), {}, {}};
    rep.config["widths"] = init.widths();
    rep.config["init"] = ctx.c.model.empty() ? ctx.t.init : "model";
    rep.config["epochs"] = tc.epochs;
    rep.config["batch"] = tc.batch_size;
    rep.config["lr"] = tc.learning_rate;
    rep.config["lr_scaling"] = ctx.t.lr_scaling;
    rep.config["reg"] = reg_json(tc.reg);
    rep.config["loss"] = std::string(to_string(tc.loss.kind));
    if (tc.dropout_p_train) rep.config["dropout"] = tc.dropout_p_train->p;
    const TrainResult r = tc.dropout_p_train ? train_with_dropout(std::move(init), data, tc) : train(std::move(init), data, tc);
    rep.results["best_epoch"] = r.best_epoch;
    rep.results["best_value"] = r.best_value;
    json hist = json::array();
    for (double v : r.history) hist.push_back(num(v));
    rep.results["history"] = std::move(hist);
    rep.results["clean_mae"] = crashing_mae(r.net, data, CrashModel{std::vector<double>(static_cast<std::size_t>(r.net.depth()) + 1, 0.0)},
                                            1, ctx.c.seed, 1).mean;
    if (!ctx.t.model_out.empty()) {
        write_model(r.net, ctx.t.model_out);
        rep.results["model_out"] = ctx.t.model_out;
        *ctx.out << "wrote " << ctx.t.model_out << "\n";
    }
    *ctx.out << "trained " << tc.epochs << " epochs: initial loss " << g(r.history.front()) << ", best " << g(r.best_value)
             << " at epoch " << r.best_epoch << "\n";
    emit(ctx, rep);
    return kExitOk;
}

int cmd_certify(Ctx& ctx) {
    const Dataset data = load_data(ctx.c, std::nullopt);
    CertifyConfig cfg;
    cfg.epsilon = ctx.c.epsilon.value_or(9e-3);
    cfg.delta_prime = ctx.c.delta.value_or(1e-5);
    cfg.complexity_C = ctx.cert.complexity_C;
    cfg.initial_widths = parse_widths(ctx.t.widths);
    cfg.max_iterations = ctx.cert.max_iterations;
    cfg.width_increment = ctx.cert.width_increment;
    cfg.q_threshold = ctx.cert.q_threshold;
    cfg.check.include_delta0 = !ctx.cert.no_delta0;
    cfg.check.alpha = ctx.cert.alpha;
    cfg.train = train_config(ctx);
    cfg.hidden = activation_from_string(ctx.t.hidden);
    cfg.seed = ctx.c.seed;
    const LossConfig loss = cfg.train.loss;
    if (static_cast<Index>(data.front().x.size()) != cfg.initial_widths.front())
        throw SchemaError("--widths: first width must match the data's " + std::to_string(data.front().x.size()) + " inputs");
    const CrashModel crash = crash_for_depth(static_cast<Index>(cfg.initial_widths.size()) - 1, ctx.c.p);

    Report rep{"certify", common_config(ctx.c), {}, {}};
    rep.config["epsilon"] = cfg.epsilon;
    rep.config["delta"] = cfg.delta_prime;
    rep.config["complexity_C"] = cfg.complexity_C;
    rep.config["widths"] = cfg.initial_widths;
    rep.config["max_iterations"] = cfg.max_iterations;
    rep.config["width_increment"] = cfg.width_increment;
    rep.config["q_threshold"] = cfg.q_threshold;
    rep.config["include_delta0"] = cfg.check.include_delta0;
    rep.config["epochs"] = cfg.train.epochs;
    rep.config["lr"] = cfg.train.learning_rate;
    rep.config["lr_scaling"] = ctx.t.lr_scaling;
    rep.config["loss"] = std::string(to_string(loss.kind));

    const CertificationResult r = certify(data, loss, crash, cfg);
    std::ostream& o = *ctx.out;
    rep.results["status"] = std::string(to_string(r.status));
    rep.results["replicas"] = r.replicas;
    rep.results["widths"] = r.widths;
    rep.results["reg"] = reg_json(r.reg);
    if (r.status == CertStatus::certified) rep.results["certificate"] = certificate_json(r.certificate);
    Table log{"iterations", {"iteration", "hidden_width", "lambda", "mu", "psi_deriv", "train_loss", "q", "delta0", "r3", "mean", "variance", "delta", "action"}, {}};
    json jlog = json::array();
    for (const IterationRecord& it : r.log) {
        jlog.push_back({{"iteration", it.iteration}, {"widths", it.widths}, {"reg", reg_json(it.reg)},
                        {"train_loss", num(it.train_loss)}, {"q", num(it.q)}, {"delta0", num(it.delta0)}, {"r3", num(it.r3)},
                        {"mean", num(it.mean)}, {"variance", num(it.variance)}, {"delta", num(it.delta)},
                        {"action", std::string(to_string(it.action))}});
        log.rows.push_back({static_cast<double>(it.iteration), static_cast<double>(it.widths[1]), it.reg.lambda, it.reg.mu,
                            it.reg.psi_deriv, it.train_loss, it.q, it.delta0, it.r3, it.mean, it.variance, it.delta,
                            static_cast<double>(it.action)});
        o << "iter " << it.iteration << " width " << it.widths[1] << ": q " << g(it.q) << " delta0 " << g(it.delta0)
          << " R3 " << g(it.r3) << " E " << g(it.mean) << " delta " << g(it.delta) << " -> " << to_string(it.action) << "\n";
    }
    rep.results["log"] = std::move(jlog);
    rep.tables.push_back(std::move(log));
    o << to_string(r.status);
    if (r.status == CertStatus::certified)
        o << ": single network (" << g(cfg.epsilon) << ", " << g(r.certificate.delta) << "), median of R = " << r.replicas
          << " for delta' = " << g(cfg.delta_prime);
    o << "\n";
    if (r.status == CertStatus::certified && !ctx.t.model_out.empty()) {
        write_model(r.net, ctx.t.model_out);
        rep.results["model_out"] = ctx.t.model_out;
    }
    if (r.status == CertStatus::certified && ctx.cert.validate_trials > 0) {
        const ValidationReport v = replicate_and_validate(r, data, crash, loss, cfg.epsilon, cfg.delta_prime,
                                                          ctx.cert.validate_trials, ctx.c.seed, threads_of(ctx.c));
        Table decay{"validation", {"replicas", "trials", "hits", "delta_hat", "ci_lower", "ci_upper", "stated_bound"}, {}};
        for (const auto& pt : v.decay)
            decay.rows.push_back({static_cast<double>(pt.replicas), static_cast<double>(pt.trials),
                                  static_cast<double>(pt.hits), pt.delta_hat, pt.ci.lower, pt.ci.upper, pt.stated_bound});
        rep.results["validation"] = {{"pass", v.pass},
                                     {"delta_hat", v.final.delta_hat},
                                     {"ci_upper", v.final.ci.upper},
                                     {"trials", v.final.trials},
                                     {"estimator", "monte-carlo, Wilson 95%"}};
        rep.tables.push_back(std::move(decay));
        o << "validation at R = " << v.final.replicas << ": delta_hat " << g(v.final.delta_hat) << " (95% upper "
          << g(v.final.ci.upper) << ") " << (v.pass ? "<=" : ">") << " 10 delta'\n";
    }
    emit(ctx, rep);
    return r.status == CertStatus::certified ? kExitOk : kExitInfeasible;
}

void report_experiment(Ctx& ctx, const ExperimentReport& er) {
    Report rep{"experiment", common_config(ctx.c), {}, er.tables};
    rep.config["name"] = ctx.experiment;
    for (const auto& [k, v] : er.parameters) rep.config[k] = v;
    json metrics = json::array();
    for (const Metric& m : er.metrics)
        metrics.push_back({{"name", m.name}, {"value", num(m.value)}, {"std_error", num(m.std_error)}, {"repeats", m.repeats}});
    json asserts = json::array();
    for (const Assertion& a : er.assertions) asserts.push_back({{"name", a.name}, {"pass", a.pass}, {"detail", a.detail}});
    rep.results["metrics"] = std::move(metrics);
    rep.results["assertions"] = std::move(asserts);
    rep.results["all_pass"] = er.all_pass();
    std::ostream& o = *ctx.out;
    for (const Metric& m : er.metrics)
        o << "  " << m.name << " = " << g(m.value) << (m.std_error > 0 ? " +- " + g(m.std_error) : "") << "\n";
    for (const Assertion& a : er.assertions)
        o << (a.pass ? "PASS " : "FAIL ") << a.name << (a.detail.empty() ? "" : " (" + a.detail + ")") << "\n";
    emit(ctx, rep);
}

int cmd_experiment(Ctx& ctx) {
    const unsigned threads = threads_of(ctx.c);
    if (ctx.experiment == "dropout-sweep") {
        DropoutSweepConfig cfg;
        cfg.seed = ctx.c.seed;
        cfg.threads = threads;
        if (ctx.repeats) cfg.repeats = *ctx.repeats;
        report_experiment(ctx, run_dropout_sweep(cfg));
    } else if (ctx.experiment == "width-sweep") {
        WidthSweepConfig cfg;
        cfg.mode = width_sweep_mode_from_string(ctx.mode);
        cfg.seed = ctx.c.seed;
        cfg.threads = threads;
        if (ctx.repeats) cfg.repeats = *ctx.repeats;
        report_experiment(ctx, run_width_sweep(cfg));
    } else if (ctx.experiment == "regularizer-comparison") {
        RegularizerComparisonConfig cfg;
        cfg.seed = ctx.c.seed;
        cfg.threads = threads;
        if (ctx.repeats) cfg.repeats = *ctx.repeats;
        report_experiment(ctx, run_regularizer_comparison(cfg));
    } else if (ctx.experiment == "bound-table") {
        BoundTableConfig cfg;
        cfg.seed = ctx.c.seed;
        cfg.threads = threads;
        if (ctx.repeats) cfg.networks = *ctx.repeats;
        if (!ctx.c.p.empty()) cfg.p_grid = parse_double_list(ctx.c.p);
        report_experiment(ctx, run_bound_table(cfg));
    } else {
        throw SchemaError("unknown experiment '" + ctx.experiment +
                          "' (expected dropout-sweep, width-sweep, regularizer-comparison or bound-table)");
    }
    return kExitOk;
}

int cmd_median_sim(Ctx& ctx) {
    const Network net = load_model(ctx.c);
    const CrashModel crash = load_crash(net, ctx.c);
    const double eps = require(ctx.c.epsilon, "--epsilon");
    Report rep{"median-sim", common_config(ctx.c), {}, {}};
    rep.config["replicas"] = ctx.replicas;
    rep.config["trials"] = ctx.c.samples;
    MedianSimResult r;
    if (!ctx.c.input.empty()) {
        rep.config["head"] = ctx.c.head;
        r = median_replica_sim(net, load_input(net, ctx.c), crash, load_head(net, ctx.c), ctx.replicas, eps, ctx.c.samples,
                               ctx.c.seed, threads_of(ctx.c));
    } else {
        const Dataset data = load_data(ctx.c, net.input_dim());
        const LossConfig loss = load_loss(ctx.c);
        rep.config["loss"] = std::string(to_string(loss.kind));
        r = median_replica_sim(net, data, crash, loss, ctx.replicas, eps, ctx.c.samples, ctx.c.seed, threads_of(ctx.c));
    }
    rep.results = {{"replicas", r.replicas},
                   {"trials", r.trials},
                   {"failure_rate", r.failure_rate},
                   {"std_error", r.std_error},
                   {"base_rate", r.base_rate},
                   {"base_std_error", r.base_std_error},
                   {"estimator", "monte-carlo"}};
    if (r.base_rate <= 1.0 / 3.0 && r.base_rate > 0.0) {
        rep.results["stated_bound"] = median_failure_bound(r.base_rate, r.replicas);
        rep.results["exact_independent"] = median_failure_exact(r.base_rate, r.replicas);
    }
    *ctx.out << "median of " << r.replicas << ": P{fail} = " << g(r.failure_rate) << " +- " << g(r.std_error)
             << " (single replica " << g(r.base_rate) << " +- " << g(r.base_std_error) << ", " << r.trials << " trials)\n";
    emit(ctx, rep);
    return kExitOk;
}

int run_argv(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_replay(Ctx& ctx) {
    const json doc = json::parse(read_text_file(ctx.replay_path), nullptr, false);
    if (doc.is_discarded() || !doc.contains("argv") || !doc["argv"].is_array())
        throw SchemaError(ctx.replay_path + ": not a crashcert report (missing argv)");
    std::vector<std::string> args;
    for (const auto& a : doc["argv"]) {
        if (!a.is_string()) throw SchemaError(ctx.replay_path + ": argv entries must be strings");
        args.push_back(a.get<std::string>());
    }
    // Drop the original --out so a replay never overwrites the report it reads.
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--out") {
            ++i;
            continue;
        }
        if (args[i].rfind("--out=", 0) == 0) continue;
        kept.push_back(args[i]);
    }
    if (!ctx.c.out.empty()) {
        kept.push_back("--out");
        kept.push_back(ctx.c.out);
    }
    return run_argv(kept, *ctx.out, std::cerr);
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

void add_common(CLI::App* sub, Common& c, bool model, bool data, bool p) {
    if (model) sub->add_option("--model", c.model, "model JSON file");
    if (data) sub->add_option("--data", c.data, "CSV file or synth:KIND[:n[:noise[:seed]]]");
    if (p) sub->add_option("--p", c.p, "crash probability: scalar (layers 0..L-1) or per-layer list 0..L");
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--out", c.out, "report path");
    sub->add_option("--format", c.format, "report format")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--threads", c.threads, "worker threads (0 = CRASHCERT_THREADS or 1)")->envname("CRASHCERT_THREADS");
}

void add_single_input(CLI::App* sub, Common& c) {
    sub->add_option("--input", c.input, "comma-separated input vector");
    sub->add_option("--head", c.head, "output component");
}

void add_loss(CLI::App* sub, Common& c) {
    sub->add_option("--loss", c.loss, "auto, mse or margin")->check(CLI::IsMember({"auto", "mse", "margin"}));
}

void add_training(CLI::App* sub, TrainOpts& t) {
    sub->add_option("--widths", t.widths, "layer widths n_0,...,n_L");
    sub->add_option("--hidden", t.hidden, "hidden activation")->check(CLI::IsMember({"sigmoid", "relu"}));
    sub->add_option("--epochs", t.epochs);
    sub->add_option("--batch", t.batch);
    sub->add_option("--lr", t.lr);
    sub->add_option("--lr-scaling", t.lr_scaling, "uniform or mean-field")->check(CLI::IsMember({"uniform", "mean-field"}));
    sub->add_option("--model-out", t.model_out, "write the trained model here");
}

int dispatch(Ctx& ctx, const std::string& name) {
    if (name == "inspect") return cmd_inspect(ctx);
    if (name == "inject") return cmd_inject(ctx);
    if (name == "enumerate") return cmd_enumerate(ctx);
    if (name == "bound") return cmd_bound(ctx);
    if (name == "check-ft") return cmd_check_ft(ctx);
    if (name == "median-plan") return cmd_median_plan(ctx);
    if (name == "train") return cmd_train(ctx);
    if (name == "certify") return cmd_certify(ctx);
    if (name == "experiment") return cmd_experiment(ctx);
    if (name == "median-sim") return cmd_median_sim(ctx);
    if (name == "replay") return cmd_replay(ctx);
    throw SchemaError("unknown command " + name);
}

int run_argv(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Ctx ctx;
    ctx.out = &out;
    ctx.argv = args;
    Common& c = ctx.c;

    CLI::App app{"Fault tolerance of neural networks under random neuron crashes", "crashcert"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CRASHCERT_VERSION);

    auto* inspect = app.add_subcommand("inspect", "shapes, norms, q-factors and continuity metrics");
    add_common(inspect, c, true, false, true);

    auto* inject = app.add_subcommand("inject", "Monte Carlo crash injection");
    add_common(inject, c, true, true, true);
    add_single_input(inject, c);
    add_loss(inject, c);
    inject->add_option("--samples", c.samples, "samples (per input with --data)");
    inject->add_option("--epsilon", c.epsilon, "tail threshold");

    auto* enumerate = app.add_subcommand("enumerate", "exact moments by enumerating crash configurations");
    add_common(enumerate, c, true, false, true);
    add_single_input(enumerate, c);

    auto* bound = app.add_subcommand("bound", "analytic bounds b1..b4");
    add_common(bound, c, true, true, true);
    add_single_input(bound, c);
    add_loss(bound, c);
    bound->add_option("--method", ctx.method, "b1, b2, b3 or b4")->check(CLI::IsMember({"b1", "b2", "b3", "b4"}));
    bound->add_option("--d12", ctx.d12, "derivative bound for the b3 remainder");

    auto* check = app.add_subcommand("check-ft", "(epsilon, delta) certificate for a trained network");
    add_common(check, c, true, true, true);
    add_loss(check, c);
    check->add_option("--epsilon", c.epsilon, "loss increase budget");
    check->add_option("--delta", c.delta, "target failure probability");
    check->add_option("--samples", ctx.check_samples, "empirical cross-check samples per input (0 skips)");
    check->add_flag("--no-delta0", ctx.cert.no_delta0, "Chebyshev only, without the perturbation term");
    check->add_option("--alpha", ctx.cert.alpha, "deviation level for the perturbation bound");

    auto* plan = app.add_subcommand("median-plan", "replicas needed by the median of R networks");
    plan->add_option("--base", ctx.base, "single-network failure probability (<= 1/3)");
    plan->add_option("--delta", c.delta, "target failure probability");
    plan->add_option("--out", c.out, "report path");
    plan->add_option("--format", c.format)->check(CLI::IsMember({"json", "csv"}));

    auto* train_cmd = app.add_subcommand("train", "train a network");
    add_common(train_cmd, c, true, true, false);
    add_loss(train_cmd, c);
    add_training(train_cmd, ctx.t);
    train_cmd->add_option("--init", ctx.t.init, "continuous or random (ignored with --model)")
        ->check(CLI::IsMember({"continuous", "random"}));
    train_cmd->add_option("--lambda", ctx.t.lambda, "variance regularizer weight");
    train_cmd->add_option("--mu", ctx.t.mu, "balance regularizer weight");
    train_cmd->add_option("--psi-deriv", ctx.t.psi_deriv, "continuity weight on C1 + C2");
    train_cmd->add_option("--psi-smooth", ctx.t.psi_smooth, "continuity weight on C3");
    train_cmd->add_option("--nu", ctx.t.nu, "infinity-norm weight");
    train_cmd->add_option("--dropout", ctx.t.dropout, "training dropout, scalar or per-layer list");

    auto* certify_cmd = app.add_subcommand("certify", "train until the (epsilon, delta') certificate holds");
    add_common(certify_cmd, c, false, true, true);
    add_loss(certify_cmd, c);
    add_training(certify_cmd, ctx.t);
    certify_cmd->add_option("--epsilon", c.epsilon, "loss increase budget (default 9e-3)");
    certify_cmd->add_option("--delta", c.delta, "target failure probability of the median system (default 1e-5)");
    certify_cmd->add_option("--complexity-C", ctx.cert.complexity_C, "bound on the continuity metrics")->required();
    certify_cmd->add_option("--max-iterations", ctx.cert.max_iterations);
    certify_cmd->add_option("--width-increment", ctx.cert.width_increment);
    certify_cmd->add_option("--q-threshold", ctx.cert.q_threshold);
    certify_cmd->add_flag("--no-delta0", ctx.cert.no_delta0);
    certify_cmd->add_option("--alpha", ctx.cert.alpha);
    certify_cmd->add_option("--validate", ctx.cert.validate_trials, "Monte Carlo trials for validating the median system");

    auto* exp = app.add_subcommand("experiment", "run a named experiment protocol");
    add_common(exp, c, false, false, true);
    exp->add_option("name", ctx.experiment, "dropout-sweep, width-sweep, regularizer-comparison or bound-table")->required();
    exp->add_option("--repeats", ctx.repeats, "repeats (networks for bound-table)");
    exp->add_option("--mode", ctx.mode, "width-sweep mode")->check(CLI::IsMember({"duplication", "regularized", "random"}));

    auto* sim = app.add_subcommand("median-sim", "Monte Carlo failure rate of the median of R replicas");
    add_common(sim, c, true, true, true);
    add_single_input(sim, c);
    add_loss(sim, c);
    sim->add_option("--replicas", ctx.replicas, "odd number of replicas");
    sim->add_option("--epsilon", c.epsilon, "failure threshold");
    sim->add_option("--samples", c.samples, "trials");

    auto* replay = app.add_subcommand("replay", "re-run the command recorded in a report");
    replay->add_option("report", ctx.replay_path)->required();
    replay->add_option("--out", c.out, "report path for the re-run");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    const std::string name = app.get_subcommands().front()->get_name();
    try {
        return dispatch(ctx, name);
    } catch (const InfeasibleCertificate& e) {
        err << "crashcert " << name << ": infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const EnumerationInfeasible& e) {
        err << "crashcert " << name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const SchemaError& e) {
        err << "crashcert " << name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "crashcert " << name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const DimensionError& e) {
        err << "crashcert " << name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const DomainError& e) {
        err << "crashcert " << name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "crashcert " << name << ": error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_argv(args, out, err);
}

} // namespace crashcert
