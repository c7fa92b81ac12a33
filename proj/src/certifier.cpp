#include "crashcert/certifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace crashcert {

RegWeights CertifyConfig::default_initial_reg() {
    RegWeights w;
    w.lambda = 1e-6;
    w.mu = 1e-10;
    w.psi_deriv = 1e-4;
    w.psi_smooth = 1e-2;
    return w;
}

void CertifyConfig::validate() const {
    if (!(epsilon > 0.0)) throw DomainError("certify: epsilon must be positive");
    if (!(delta_prime > 0.0 && delta_prime < 1.0)) throw DomainError("certify: delta' must lie in (0, 1)");
    if (!(complexity_C > 0.0)) throw DomainError("certify: the complexity guess C must be positive");
    if (initial_widths.size() < 3) throw DimensionError("certify: need at least one hidden layer");
    if (max_iterations == 0) throw DomainError("certify: max_iterations must be >= 1");
    if (width_increment < 1) throw DomainError("certify: width increment must be >= 1");
    if (!(knob_multiplier > 1.0) || !(lambda_multiplier > 1.0)) throw DomainError("certify: multipliers must exceed 1");
    initial_reg.validate();
}

std::string_view to_string(CertStatus s) {
    switch (s) {
    case CertStatus::certified: return "certified";
    case CertStatus::infeasible: return "infeasible";
    case CertStatus::iteration_cap: return "iteration_cap";
    }
    return "?";
}

std::string_view to_string(CertAction a) {
    switch (a) {
    case CertAction::increase_mu: return "increase_mu";
    case CertAction::increase_width: return "increase_width";
    case CertAction::increase_psi: return "increase_psi";
    case CertAction::infeasible: return "infeasible";
    case CertAction::increase_width_and_lambda: return "increase_width_and_lambda";
    case CertAction::certified: return "certified";
    }
    return "?";
}

namespace {

double measured_r3(const Network& net, const RegWeights& reg) {
    double total = 0.0;
    for (Index l = 1; l <= net.depth(); ++l) {
        const Matrix& w = net.layer(l).weights;
        total += continuity_c1(w) + continuity_c2(w) +
                 continuity_c3(w, reg.smoothing_sigma.value_or(default_smoothing_sigma(w)));
    }
    return total;
}

void widen(std::vector<Index>& widths, Index by) {
    for (std::size_t l = 1; l + 1 < widths.size(); ++l) widths[l] += by;
}

} // namespace

CertificationResult certify(const Dataset& data, const LossConfig& loss_cfg, const CrashModel& crash,
                            const CertifyConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw DomainError("certify: empty dataset");
    const auto depth = static_cast<Index>(cfg.initial_widths.size()) - 1;
    if (static_cast<Index>(crash.p.size()) != depth + 1)
        throw DimensionError("certify: crash model needs one probability per layer 0..L");
    for (double p : crash.p)
        if (!(p >= 0.0 && p < 1.0)) throw DomainError("certify: crash probabilities must lie in [0, 1)");

    CertificationResult result;
    std::vector<Index> widths = cfg.initial_widths;
    RegWeights reg = cfg.initial_reg;
    reg.layers.clear();
    for (Index l : crash.exposed_layers())
        if (l < depth) reg.layers.push_back(l);

    for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
        TrainConfig tc = cfg.train;
        tc.reg = reg;
        tc.loss = loss_cfg;
        tc.dropout_p_train.reset();
        TrainResult trained = train(init_continuous(widths, cfg.seed, cfg.hidden), data, tc);

        IterationRecord rec;
        rec.iteration = it;
        rec.widths = widths;
        rec.reg = reg;
        rec.train_loss = trained.best_value;
        rec.delta = std::numeric_limits<double>::quiet_NaN();
        result.net = std::move(trained.net);
        result.widths = widths;
        result.reg = reg;
        const Network& net = result.net;

        const std::vector<LayerDelta0> layers = layer_delta0(net, crash, cfg.check.alpha);
        rec.q = 1.0;
        for (const auto& d : layers) rec.q = std::min(rec.q, d.q);
        rec.delta0 = cfg.check.include_delta0 ? total_delta0(layers) : 0.0;
        rec.r3 = measured_r3(net, reg);
        const BoundReport moments = bound_taylor_dataset(net, data, crash, loss_cfg);
        rec.mean = moments.mean;
        rec.variance = moments.variance.value_or(0.0);

        const auto finish = [&](CertAction action) {
            rec.action = action;
            result.log.push_back(rec);
        };

        if (rec.q < cfg.q_threshold) {
            finish(CertAction::increase_mu);
            reg.mu *= cfg.knob_multiplier;
            continue;
        }
        if (rec.delta0 > cfg.delta_threshold) {
            // With alpha >= 1 the perturbation bound is vacuous at every width.
            const bool width_helps = std::all_of(layers.begin(), layers.end(), [](const LayerDelta0& d) {
                return d.delta0 < 1.0 || (d.alpha < 1.0 && d.alpha > d.p);
            });
            if (!width_helps) {
                finish(CertAction::infeasible);
                result.status = CertStatus::infeasible;
                return result;
            }
            finish(CertAction::increase_width);
            widen(widths, cfg.width_increment);
            continue;
        }
        if (rec.r3 > cfg.complexity_C) {
            finish(CertAction::increase_psi);
            reg.psi_deriv *= cfg.knob_multiplier;
            reg.psi_smooth *= cfg.knob_multiplier;
            continue;
        }
        if (!(rec.mean < cfg.epsilon)) {
            finish(CertAction::infeasible);
            result.status = CertStatus::infeasible;
            return result;
        }
        result.certificate = chebyshev_certificate(
            rec.mean, rec.variance, cfg.epsilon,
            cfg.check.include_delta0 ? std::optional<double>(rec.delta0) : std::nullopt);
        rec.delta = result.certificate.delta;
        if (rec.delta > cfg.delta_threshold) {
            finish(CertAction::increase_width_and_lambda);
            widen(widths, cfg.width_increment);
            reg.lambda *= cfg.lambda_multiplier;
            continue;
        }
        finish(CertAction::certified);
        result.status = CertStatus::certified;
        result.replicas = median_repetitions(rec.delta, cfg.delta_prime);
        return result;
    }
    result.status = CertStatus::iteration_cap;
    return result;
}

ValidationReport replicate_and_validate(const CertificationResult& result, const Dataset& data,
                                        const CrashModel& crash, const LossConfig& loss_cfg, double epsilon,
                                        double delta_prime, std::size_t trials, std::uint64_t seed,
                                        unsigned threads) {
    if (result.status != CertStatus::certified)
        throw DomainError("replicate_and_validate: the result is not certified");
    if (trials == 0) throw DomainError("replicate_and_validate: need at least one trial");
    ValidationReport report;
    report.delta_target = delta_prime;
    for (Index r = 1; r <= result.replicas; r += 2) {
        const MedianSimResult sim = median_replica_sim(result.net, data, crash, loss_cfg, r, epsilon, trials, seed, threads);
        ValidationPoint pt;
        pt.replicas = r;
        pt.trials = trials;
        pt.hits = static_cast<std::size_t>(std::llround(sim.failure_rate * static_cast<double>(trials)));
        pt.delta_hat = sim.failure_rate;
        pt.ci = wilson_interval(pt.hits, trials);
        pt.stated_bound = median_failure_bound(result.certificate.delta, r);
        report.decay.push_back(pt);
    }
    report.final = report.decay.back();
    report.pass = report.final.ci.upper <= 10.0 * delta_prime;
    return report;
}

} // namespace crashcert
