#include "crashcert/gradients.hpp"

#include <algorithm>
#include <limits>

namespace crashcert {

namespace {

void backward_into(const Network& net, const ForwardTrace& trace, std::span<const Vector> gains, Index from_layer,
                   Vector d_out, GradientBundle& out) {
    const auto gain = [&](Index l) -> const Vector* {
        if (gains.empty()) return nullptr;
        const Vector& g = gains[static_cast<std::size_t>(l)];
        return g.size() == 0 ? nullptr : &g;
    };
    out.d_act[static_cast<std::size_t>(net.depth())] = std::move(d_out);
    for (Index l = net.depth(); l > from_layer; --l) {
        const auto ul = static_cast<std::size_t>(l);
        const auto& layer = net.layer(l);
        Vector dz = out.d_act[ul].cwiseProduct(
            trace.z[ul].unaryExpr([&](double v) { return activate_derivative(layer.activation, v); }));
        if (const Vector* g = gain(l)) dz = dz.cwiseProduct(*g);
        out.d_weights[ul - 1] = dz * trace.y[ul - 1].transpose();
        out.d_bias[ul - 1] = dz;
        out.d_act[ul - 1] = layer.weights.transpose() * dz;
    }
}

} // namespace

GradientBundle backprop(const Network& net, const Vector& x, const Head& head, std::span<const Vector> gains) {
    const ForwardTrace trace = forward_gated<double>(net, x, gains);
    GradientBundle out;
    out.value = head_value(trace.output(), head);
    out.d_act.resize(static_cast<std::size_t>(net.depth() + 1));
    out.d_weights.resize(static_cast<std::size_t>(net.depth()));
    out.d_bias.resize(static_cast<std::size_t>(net.depth()));
    backward_into(net, trace, gains, 0, head_gradient(trace.output(), head), out);
    return out;
}

Vector xi_derivative(const Network& net, const Vector& x, Index l, const Head& head) {
    if (l < 0 || l > net.depth()) throw DimensionError("xi_derivative: layer out of range");
    const ForwardTrace trace = forward(net, x);
    GradientBundle g;
    g.d_act.resize(static_cast<std::size_t>(net.depth() + 1));
    g.d_weights.resize(static_cast<std::size_t>(net.depth()));
    g.d_bias.resize(static_cast<std::size_t>(net.depth()));
    backward_into(net, trace, {}, l, head_gradient(trace.output(), head), g);
    const auto ul = static_cast<std::size_t>(l);
    return -g.d_act[ul].cwiseProduct(trace.y[ul]);
}

WeightSaliency weight_saliency(const Network& net, const Vector& x, Index l, const Head& head) {
    if (l < 1 || l > net.depth()) throw DimensionError("weight_saliency: weight layer must lie in [1, L]");
    const GradientBundle g = backprop(net, x, head);
    WeightSaliency s;
    s.X = net.layer(l).weights.cwiseProduct(g.d_weights[static_cast<std::size_t>(l - 1)]);
    s.z = -s.X.colwise().sum().transpose();
    return s;
}

LayerGradient gradient_from_layer(const Network& net, Index l, const Vector& y_l, const Head& head) {
    if (l < 0 || l > net.depth()) throw DimensionError("gradient_from_layer: layer out of range");
    if (y_l.size() != net.width(l)) throw DimensionError("gradient_from_layer: activation length mismatch");
    ForwardTrace trace;
    trace.z.resize(static_cast<std::size_t>(net.depth() + 1));
    trace.y.resize(static_cast<std::size_t>(net.depth() + 1));
    trace.y[static_cast<std::size_t>(l)] = y_l;
    for (Index k = l + 1; k <= net.depth(); ++k) {
        const auto& layer = net.layer(k);
        const auto uk = static_cast<std::size_t>(k);
        trace.z[uk] = layer.weights * trace.y[uk - 1] + layer.bias;
        trace.y[uk] = trace.z[uk].unaryExpr([&](double v) { return activate(layer.activation, v); });
    }
    GradientBundle g;
    g.d_act.resize(static_cast<std::size_t>(net.depth() + 1));
    g.d_weights.resize(static_cast<std::size_t>(net.depth()));
    g.d_bias.resize(static_cast<std::size_t>(net.depth()));
    backward_into(net, trace, {}, l, head_gradient(trace.output(), head), g);
    return {head_value(trace.output(), head), std::move(g.d_act[static_cast<std::size_t>(l)])};
}

Vector hessian_diag(const Network& net, const Vector& x, Index l, const Head& head) {
    if (!net.smooth()) throw DomainError("hessian_diag: ReLU networks are not twice differentiable");
    if (l < 0 || l > net.depth()) throw DimensionError("hessian_diag: layer out of range");
    const Vector y = forward(net, x).y[static_cast<std::size_t>(l)];
    Vector h(y.size());
    for (Index i = 0; i < y.size(); ++i) {
        const double step = 1e-3 * (1.0 + std::abs(y[i]));
        Vector up = y, down = y;
        up[i] += step;
        down[i] -= step;
        h[i] = (gradient_from_layer(net, l, up, head).grad[i] - gradient_from_layer(net, l, down, head).grad[i]) /
               (2.0 * step);
    }
    return h;
}

FiniteDifferenceCheck finite_difference_check(const Network& net, const Vector& x, const Head& head, double floor) {
    const GradientBundle g = backprop(net, x, head);
    FiniteDifferenceCheck out;
    Network probe = net;
    const auto eval = [&] { return head_value(forward(probe, x).output(), head); };
    const auto compare = [&](double analytic, double& theta) {
        const double saved = theta;
        const double step = 1e-5 * (1.0 + std::abs(saved));
        theta = saved + step;
        const double up = eval();
        theta = saved - step;
        const double down = eval();
        theta = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double abs_err = std::abs(numeric - analytic);
        out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
        out.max_relative_error = std::max(
            out.max_relative_error, abs_err / std::max({std::abs(numeric), std::abs(analytic), floor}));
        ++out.parameters;
    };
    for (Index l = 1; l <= net.depth(); ++l) {
        auto& layer = probe.layer(l);
        const auto ul = static_cast<std::size_t>(l - 1);
        for (Index i = 0; i < layer.weights.rows(); ++i)
            for (Index j = 0; j < layer.weights.cols(); ++j) compare(g.d_weights[ul](i, j), layer.weights(i, j));
        for (Index i = 0; i < layer.bias.size(); ++i) compare(g.d_bias[ul][i], layer.bias[i]);
    }
    return out;
}

std::vector<DerivativeDecayRow> derivative_decay_report(std::span<const Network> nets, std::span<const Vector> xs) {
    std::vector<DerivativeDecayRow> rows;
    const Head head = Head::output(0);
    for (const Network& net : nets) {
        if (net.depth() < 2) throw DimensionError("derivative_decay_report: networks need a hidden layer");
        DerivativeDecayRow row;
        row.width = net.width(1);
        row.inf_norm_product = 1.0;
        for (const auto& layer : net.layers()) row.inf_norm_product *= matrix_norm(layer.weights, NormKind::inf);
        const bool smooth = net.smooth();
        double d_sum = 0.0, h_sum = 0.0;
        for (const Vector& x : xs) {
            const ForwardTrace trace = forward(net, x);
            d_sum += gradient_from_layer(net, 1, trace.y[1], head).grad.cwiseAbs().mean();
            if (smooth) h_sum += hessian_diag(net, x, 1, head).cwiseAbs().mean();
        }
        const double n = static_cast<double>(std::max<std::size_t>(xs.size(), 1));
        row.avg_abs_derivative = d_sum / n;
        row.avg_abs_hessian = smooth ? h_sum / n : std::numeric_limits<double>::quiet_NaN();
        rows.push_back(row);
    }
    return rows;
}

} // namespace crashcert
