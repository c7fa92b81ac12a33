#include "crashcert/bounds.hpp"

#include <cmath>

#include "crashcert/gradients.hpp"

namespace crashcert {

std::string_view to_string(BoundMethod m) {
    switch (m) {
    case BoundMethod::b1:
        return "b1";
    case BoundMethod::b2:
        return "b2";
    case BoundMethod::b3:
        return "b3";
    case BoundMethod::b4:
        break;
    }
    return "b4";
}

BoundMethod bound_method_from_string(std::string_view name) {
    if (name == "b1") return BoundMethod::b1;
    if (name == "b2") return BoundMethod::b2;
    if (name == "b3") return BoundMethod::b3;
    if (name == "b4") return BoundMethod::b4;
    throw DomainError("unknown bound method '" + std::string(name) + "'");
}

namespace {

/// K_l = prod_{k>l} ||W_k|| for l in [0, L].
std::vector<double> tail_products(const Network& net, NormKind kind) {
    std::vector<double> k(static_cast<std::size_t>(net.depth() + 1), 1.0);
    for (Index l = net.depth() - 1; l >= 0; --l)
        k[static_cast<std::size_t>(l)] =
            k[static_cast<std::size_t>(l + 1)] * matrix_norm(net.layer(l + 1).weights, kind);
    return k;
}

void flag_nonsmooth(const Network& net, BoundReport& report) {
    if (!net.smooth())
        report.warnings.emplace_back("non-smooth activation (relu): the Taylor expansion is not justified");
}

double r_factor(const Network& net, Index l, double p) { return p + 1.0 / static_cast<double>(net.width(l)); }

} // namespace

BoundReport bound_spectral(const Network& net, const Vector& x, const CrashModel& crash) {
    crash.validate(net);
    const ForwardTrace trace = forward(net, x);
    const std::vector<double> k2 = tail_products(net, NormKind::spectral_upper);
    const std::vector<double> kinf = tail_products(net, NormKind::inf);
    BoundReport r;
    r.method = BoundMethod::b1;
    double worst = 0.0, mean = 0.0, inf_mean = 0.0;
    for (Index l = 0; l <= net.depth(); ++l) {
        const auto ul = static_cast<std::size_t>(l);
        const double p = crash.p[ul];
        if (p <= 0.0) continue;
        const Vector& y = trace.y[ul];
        worst += k2[ul] * y.norm();
        mean += k2[ul] * std::sqrt(p) * y.norm();
        inf_mean += p * static_cast<double>(y.size()) * y.cwiseAbs().maxCoeff() * kinf[ul];
        r.layers.push_back({l, p, k2[ul] * std::sqrt(p) * y.norm(), 0.0, r_factor(net, l, p)});
    }
    r.mean = mean;
    r.worst_case = worst;
    r.inf_norm_mean = inf_mean;
    r.lipschitz_product = k2[0];
    return r;
}

double spectral_mask_bound(const Network& net, const Vector& x, const CrashMask& mask) {
    check_mask(net, mask);
    const ForwardTrace trace = forward(net, x);
    const std::vector<double> k2 = tail_products(net, NormKind::spectral_upper);
    double total = 0.0;
    for (std::size_t l = 0; l < mask.size(); ++l)
        total += k2[l] * trace.y[l].cwiseProduct(mask[l].cast<double>().matrix()).norm();
    return total;
}

BoundReport bound_absolute(const Network& net, const Vector& x, const CrashModel& crash, Index component) {
    crash.validate(net);
    if (component < 0 || component >= net.output_dim()) throw DimensionError("bound_absolute: component out of range");
    const ForwardTrace trace = forward(net, x);
    Vector e = crash.p[0] * trace.y[0].cwiseAbs();
    for (Index l = 1; l <= net.depth(); ++l) {
        const auto ul = static_cast<std::size_t>(l);
        e = net.layer(l).weights.cwiseAbs() * e + crash.p[ul] * trace.y[ul].cwiseAbs();
    }
    BoundReport r;
    r.method = BoundMethod::b2;
    r.mean_vector = e;
    r.mean = e[component];
    return r;
}

BoundReport bound_taylor(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                         std::optional<double> d12) {
    crash.validate(net);
    BoundReport r;
    r.method = BoundMethod::b3;
    double mean = 0.0, var = 0.0;
    RemainderDiagnostics rem;
    for (Index l : crash.exposed_layers()) {
        const double p = crash.p[static_cast<std::size_t>(l)];
        const Vector v = xi_derivative(net, x, l, head);
        LayerContribution c{l, p, p * v.sum(), p * v.squaredNorm(), r_factor(net, l, p)};
        mean += c.mean;
        var += c.variance;
        if (d12) {
            rem.mean_magnitude += *d12 * c.r * c.r;
            rem.variance_magnitude += *d12 * c.r * c.r * c.r;
        }
        r.layers.push_back(c);
    }
    r.mean = mean;
    r.variance = var;
    if (d12) {
        rem.d12 = *d12;
        r.remainder = rem;
        r.warnings.emplace_back(
            "variance remainder uses D12 r^3; the longer derivation produces D^2 r^3 factors instead");
    } else {
        r.warnings.emplace_back("first-order only: no D12 supplied, remainders omitted");
    }
    flag_nonsmooth(net, r);
    return r;
}

BoundReport bound_taylor_weightform(const Network& net, const Vector& x, const CrashModel& crash, const Head& head) {
    crash.validate(net);
    BoundReport r;
    r.method = BoundMethod::b3;
    double mean = 0.0, var = 0.0;
    for (Index l : crash.exposed_layers()) {
        const double p = crash.p[static_cast<std::size_t>(l)];
        const Vector z = l < net.depth() ? weight_saliency(net, x, l + 1, head).z : xi_derivative(net, x, l, head);
        LayerContribution c{l, p, p * z.sum(), p * z.squaredNorm(), r_factor(net, l, p)};
        mean += c.mean;
        var += c.variance;
        r.layers.push_back(c);
    }
    r.mean = mean;
    r.variance = var;
    flag_nonsmooth(net, r);
    return r;
}

BoundReport bound_single_crash(const Network& net, const Vector& x, const CrashModel& crash, const Head& head) {
    crash.validate(net);
    BoundReport r;
    r.method = BoundMethod::b4;
    double mean = 0.0, var = 0.0;
    for (Index l : crash.exposed_layers()) {
        const double p = crash.p[static_cast<std::size_t>(l)];
        const ErrorMoments m = single_crash_sweep(net, x, l, head, p);
        mean += m.mean;
        var += m.variance;
        r.layers.push_back({l, p, m.mean, m.variance, r_factor(net, l, p)});
    }
    r.mean = mean;
    r.variance = var;
    r.warnings.emplace_back("variance omits the second-order (p sum delta_i)^2 term");
    return r;
}

BoundReport bound_taylor_dataset(const Network& net, const Dataset& data, const CrashModel& crash,
                                 const LossConfig& loss_cfg) {
    if (data.empty()) throw DomainError("bound_taylor_dataset: empty dataset");
    BoundReport r;
    r.method = BoundMethod::b3;
    std::vector<double> means(data.size()), vars(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const BoundReport b = bound_taylor(net, data[i].x, crash, Head::of_loss(loss_spec_for(data[i], loss_cfg)));
        means[i] = b.mean;
        vars[i] = *b.variance;
        if (i == 0) {
            r.layers = b.layers;
            for (auto& c : r.layers) c.mean = c.variance = 0.0;
        }
        for (std::size_t k = 0; k < b.layers.size(); ++k) {
            r.layers[k].mean += b.layers[k].mean / static_cast<double>(data.size());
            r.layers[k].variance += b.layers[k].variance / static_cast<double>(data.size());
        }
    }
    const double n = static_cast<double>(data.size());
    r.mean = pairwise_sum(means) / n;
    double spread = 0.0;
    for (double m : means) spread += (m - r.mean) * (m - r.mean);
    r.variance = pairwise_sum(vars) / n + spread / n;
    flag_nonsmooth(net, r);
    return r;
}

double stationarity_mean(const Network& net, const Dataset& data, const CrashModel& crash, const LossConfig& loss_cfg) {
    crash.validate(net);
    if (data.empty()) throw DomainError("stationarity_mean: empty dataset");
    std::vector<double> per_input(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const GradientBundle g = backprop(net, data[i].x, Head::of_loss(loss_spec_for(data[i], loss_cfg)));
        double total = 0.0;
        for (Index l : crash.exposed_layers()) {
            const double p = crash.p[static_cast<std::size_t>(l)];
            if (l < net.depth()) {
                total -= p * g.d_weights[static_cast<std::size_t>(l)].cwiseProduct(net.layer(l + 1).weights).sum();
            } else {
                const Vector y = forward(net, data[i].x).output();
                total -= p * g.d_act[static_cast<std::size_t>(l)].dot(y);
            }
        }
        per_input[i] = total;
    }
    return pairwise_sum(per_input) / static_cast<double>(data.size());
}

} // namespace crashcert
