#include "crashcert/guarantees.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace crashcert {

double q_factor(const Matrix& w) {
    if (w.size() == 0) throw DimensionError("q_factor: empty matrix");
    const Vector sums = w.cwiseAbs().rowwise().sum();
    const double hi = sums.maxCoeff();
    if (hi == 0.0) throw DomainError("q_factor: degenerate matrix (all row sums are zero)");
    return sums.minCoeff() / hi;
}

double layer_q_factor(const Network& net, Index l) {
    if (l < 0 || l > net.depth()) throw DimensionError("layer_q_factor: layer out of range");
    if (l == net.depth()) return 1.0;
    return q_factor(net.layer(l + 1).weights.transpose());
}

double perturbation_tail_delta0(Index n, double q, double alpha, double p) {
    if (n < 1) throw DomainError("perturbation_tail_delta0: n must be >= 1");
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("perturbation_tail_delta0: q must lie in [0, 1]");
    if (!(p > 0.0 && p < 1.0)) throw DomainError("perturbation_tail_delta0: p must lie in (0, 1)");
    if (!(alpha > p)) throw DomainError("perturbation_tail_delta0: alpha must exceed p");
    if (!(alpha < 1.0)) throw DomainError("perturbation_tail_delta0: alpha must be below 1");
    return std::clamp(std::exp(-static_cast<double>(n) * q * kl_bernoulli(alpha, p)), 0.0, 1.0);
}

double default_alpha(double p) { return std::numbers::e * std::numbers::e * p; }

std::string_view to_string(CertMethod m) {
    return m == CertMethod::chebyshev ? "chebyshev" : "chebyshev_plus_delta0";
}

Certificate chebyshev_certificate(double mean, double variance, double epsilon, std::optional<double> delta0) {
    if (variance < 0.0) throw DomainError("chebyshev_certificate: negative variance");
    if (!(epsilon > mean))
        throw InfeasibleCertificate("infeasible: mean exceeds budget (E delta = " + std::to_string(mean) +
                                    " >= epsilon = " + std::to_string(epsilon) + ")");
    Certificate c;
    c.epsilon = epsilon;
    c.mean = mean;
    c.variance = variance;
    c.t = epsilon - mean;
    c.delta0 = delta0.value_or(0.0);
    c.method = delta0 ? CertMethod::chebyshev_plus_delta0 : CertMethod::chebyshev;
    c.delta = std::min(1.0, c.delta0 + variance / (c.t * c.t));
    return c;
}

Index median_repetitions(double delta_base, double delta_target) {
    if (!(delta_base >= 0.0 && delta_base <= 1.0 / 3.0))
        throw DomainError("median_repetitions: base failure probability exceeds 1/3; certify the single network first");
    if (!(delta_target > 0.0 && delta_target < 1.0)) throw DomainError("median_repetitions: target must lie in (0, 1)");
    if (delta_base <= delta_target) return 1;
    Index r = static_cast<Index>(std::ceil(2.0 * std::log(delta_target) / std::log(delta_base) - 1e-9));
    r = std::max<Index>(r, 1);
    while (median_failure_bound(delta_base, r) > delta_target) ++r;
    if (r % 2 == 0) ++r;
    return r;
}

double median_failure_bound(double delta_base, Index replicas) {
    return std::pow(delta_base, static_cast<double>(replicas) / 2.0);
}

double median_failure_exact(double delta_base, Index replicas) {
    if (replicas < 1 || replicas % 2 == 0) throw DomainError("median_failure_exact: R must be odd and >= 1");
    if (!(delta_base >= 0.0 && delta_base <= 1.0)) throw DomainError("median_failure_exact: probability out of range");
    const Index need = (replicas + 1) / 2;
    double total = 0.0;
    for (Index k = need; k <= replicas; ++k) {
        const double log_binom = std::lgamma(static_cast<double>(replicas + 1)) -
                                 std::lgamma(static_cast<double>(k + 1)) -
                                 std::lgamma(static_cast<double>(replicas - k + 1));
        total += std::exp(log_binom) * std::pow(delta_base, static_cast<double>(k)) *
                 std::pow(1.0 - delta_base, static_cast<double>(replicas - k));
    }
    return std::min(total, 1.0);
}

double median_failure_chernoff(double delta_base, Index replicas) {
    return std::pow(4.0 * delta_base * (1.0 - delta_base), static_cast<double>(replicas) / 2.0);
}

BinomialInterval wilson_interval(std::size_t hits, std::size_t n, double z) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double phat = static_cast<double>(hits) / nn;
    const double z2 = z * z;
    const double centre = (phat + z2 / (2.0 * nn)) / (1.0 + z2 / nn);
    const double half = z * std::sqrt(phat * (1.0 - phat) / nn + z2 / (4.0 * nn * nn)) / (1.0 + z2 / nn);
    return {hits == 0 ? 0.0 : std::max(0.0, centre - half), hits == n ? 1.0 : std::min(1.0, centre + half)};
}

std::vector<LayerDelta0> layer_delta0(const Network& net, const CrashModel& crash, std::optional<double> alpha) {
    crash.validate(net);
    std::vector<LayerDelta0> out;
    for (Index l : crash.exposed_layers()) {
        LayerDelta0 d;
        d.layer = l;
        d.width = net.width(l);
        d.p = crash.p[static_cast<std::size_t>(l)];
        d.alpha = alpha.value_or(default_alpha(d.p));
        try {
            d.q = layer_q_factor(net, l);
        } catch (const DomainError&) {
            d.q = 0.0;
        }
        if (d.p >= 1.0 || d.alpha >= 1.0 || d.alpha <= d.p)
            d.delta0 = 1.0;
        else
            d.delta0 = perturbation_tail_delta0(d.width, d.q, d.alpha, d.p);
        out.push_back(d);
    }
    return out;
}

double total_delta0(const std::vector<LayerDelta0>& layers) {
    double total = 0.0;
    for (const auto& d : layers) total += d.delta0;
    return std::min(total, 1.0);
}

FtCheck check_ft(const Network& net, const Dataset& data, const CrashModel& crash, const LossConfig& loss_cfg,
                 double epsilon, const CheckOptions& options) {
    FtCheck out;
    out.moments = bound_taylor_dataset(net, data, crash, loss_cfg);
    out.layers = layer_delta0(net, crash, options.alpha);
    for (const auto& d : out.layers) out.q_min = std::min(out.q_min, d.q);
    const std::optional<double> d0 =
        options.include_delta0 ? std::optional<double>(total_delta0(out.layers)) : std::nullopt;
    out.certificate = chebyshev_certificate(out.moments.mean, *out.moments.variance, epsilon, d0);
    if (options.samples_per_input > 0)
        out.empirical = empirical_tail(net, data, crash, loss_cfg, epsilon, options.samples_per_input, options.seed,
                                       options.threads);
    return out;
}

} // namespace crashcert
