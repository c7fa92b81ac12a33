#include "crashcert/regularizer.hpp"

#include <algorithm>
#include <cmath>

#include "crashcert/gradients.hpp"

namespace crashcert {

void RegWeights::validate() const {
    for (double v : {lambda, mu, psi_deriv, psi_smooth, nu})
        if (!(v >= 0.0)) throw DomainError("regularizer weights must be non-negative");
    if (smoothing_sigma && !(*smoothing_sigma > 0.0)) throw DomainError("smoothing sigma must be positive");
}

double continuity_c1(const Matrix& w) {
    if (w.rows() < 2) return 0.0;
    return (w.bottomRows(w.rows() - 1) - w.topRows(w.rows() - 1)).cwiseAbs().sum();
}

double continuity_c2(const Matrix& w) {
    if (w.cols() < 2) return 0.0;
    const double scale = static_cast<double>(w.cols()) / static_cast<double>(w.rows());
    return scale * (w.rightCols(w.cols() - 1) - w.leftCols(w.cols() - 1)).cwiseAbs().sum();
}

double default_smoothing_sigma(const Matrix& w) { return std::max(1.0, static_cast<double>(w.cols()) / 32.0); }

namespace {

/// Half-sample reflection: ... c b a | a b c ... | c b a ...
Index reflect(Index k, Index n) {
    const Index period = 2 * n;
    k %= period;
    if (k < 0) k += period;
    return k < n ? k : period - 1 - k;
}

} // namespace

Matrix gaussian_smoothing_operator(Index n, double sigma) {
    if (!(sigma > 0.0)) throw DomainError("gaussian smoothing: sigma must be positive");
    const Index radius = static_cast<Index>(std::floor(3.0 * sigma + 0.5));
    Vector kernel(2 * radius + 1);
    for (Index d = -radius; d <= radius; ++d) kernel[d + radius] = std::exp(-0.5 * (d * d) / (sigma * sigma));
    kernel /= kernel.sum();
    Matrix k = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index d = -radius; d <= radius; ++d) k(i, reflect(i + d, n)) += kernel[d + radius];
    return k;
}

double continuity_c3(const Matrix& w, double sigma) {
    if (w.size() == 0) return 0.0;
    const Matrix k = gaussian_smoothing_operator(w.cols(), sigma);
    const Matrix residual = w * k.transpose() - w;
    return residual.cwiseAbs().mean();
}

namespace {

std::vector<Index> crash_layers_of(const Network& net, const RegWeights& weights) {
    std::vector<Index> layers = weights.layers;
    if (layers.empty())
        for (Index l = 0; l < net.depth(); ++l) layers.push_back(l);
    for (Index l : layers)
        if (l < 0 || l >= net.depth()) throw DimensionError("regularizer: crash layer must lie in [0, L-1]");
    return layers;
}

struct Balance {
    double value = 1.0;
    Matrix grad; ///< d value / d W_{l+1}
};

/// (max_j s_j / min_j s_j)^2 over outgoing masses s_j = sum_i |W_{ij}| of W_{l+1}.
Balance balance_term(const Matrix& w_next) {
    const Vector s = w_next.cwiseAbs().colwise().sum().transpose();
    Index jmax = 0, jmin = 0;
    const double hi = s.maxCoeff(&jmax);
    const double lo = s.minCoeff(&jmin);
    Balance b;
    b.grad = Matrix::Zero(w_next.rows(), w_next.cols());
    if (lo <= 0.0) {
        b.value = kBalanceCap;
        return b;
    }
    b.value = std::min(kBalanceCap, (hi / lo) * (hi / lo));
    if (b.value >= kBalanceCap) return b;
    const Matrix sign = w_next.unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
    b.grad.col(jmax) += 2.0 * hi / (lo * lo) * sign.col(jmax);
    b.grad.col(jmin) -= 2.0 * hi * hi / (lo * lo * lo) * sign.col(jmin);
    return b;
}

Matrix sign_of(const Matrix& m) {
    return m.unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
}

} // namespace

RegTerms reg_terms(const Network& net, const Dataset& batch, const LossConfig& loss_cfg, const RegWeights& weights) {
    weights.validate();
    RegTerms terms;
    const std::vector<Index> layers = crash_layers_of(net, weights);
    for (Index l : layers) {
        CrashLayerTerms t;
        t.layer = l;
        double acc = 0.0;
        for (const Example& ex : batch) {
            const Vector v = xi_derivative(net, ex.x, l, Head::of_loss(loss_spec_for(ex, loss_cfg)));
            acc += v.squaredNorm();
        }
        t.r1 = batch.empty() ? 0.0 : acc / static_cast<double>(batch.size());
        t.r2 = balance_term(net.layer(l + 1).weights).value;
        terms.crash_layers.push_back(t);
    }
    for (Index k = 1; k <= net.depth(); ++k) {
        const Matrix& w = net.layer(k).weights;
        WeightLayerTerms t;
        t.layer = k;
        t.c1 = continuity_c1(w);
        t.c2 = continuity_c2(w);
        t.c3 = continuity_c3(w, weights.smoothing_sigma.value_or(default_smoothing_sigma(w)));
        t.r3 = weights.psi_deriv * (t.c1 + t.c2) + weights.psi_smooth * t.c3;
        t.r4 = matrix_norm(w, NormKind::inf);
        terms.weight_layers.push_back(t);
    }
    return terms;
}

namespace {

void add_scaled(std::vector<Matrix>& dw, std::vector<Vector>& db, const GradientBundle& g, double scale) {
    for (std::size_t k = 0; k < dw.size(); ++k) {
        dw[k] += scale * g.d_weights[k];
        db[k] += scale * g.d_bias[k];
    }
}

} // namespace

RegularizedLoss regularized_loss(const Network& net, const Dataset& batch, const LossConfig& loss_cfg,
                                 const RegWeights& weights, bool with_gradient, std::span<const CrashMask> masks) {
    weights.validate();
    if (batch.empty()) throw DomainError("regularized_loss: empty batch");
    if (!masks.empty() && masks.size() != batch.size())
        throw DimensionError("regularized_loss: need one dropout mask per example");
    RegularizedLoss out;
    const auto depth = static_cast<std::size_t>(net.depth());
    if (with_gradient) {
        out.d_weights.resize(depth);
        out.d_bias.resize(depth);
        for (Index k = 1; k <= net.depth(); ++k) {
            out.d_weights[static_cast<std::size_t>(k - 1)] = Matrix::Zero(net.layer(k).weights.rows(), net.layer(k).weights.cols());
            out.d_bias[static_cast<std::size_t>(k - 1)] = Vector::Zero(net.layer(k).bias.size());
        }
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const std::vector<Index> r1_layers = weights.lambda > 0.0 ? crash_layers_of(net, weights) : std::vector<Index>{};

    double data_loss = 0.0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const Example& ex = batch[e];
        const Head head = Head::of_loss(loss_spec_for(ex, loss_cfg));
        std::vector<Vector> dropout;
        if (!masks.empty()) {
            check_mask(net, masks[e]);
            dropout = gains_from_mask<double>(masks[e]);
        }
        if (!with_gradient) {
            data_loss += head_value(forward_gated<double>(net, ex.x, dropout).output(), head);
            continue;
        }
        const GradientBundle g = backprop(net, ex.x, head, dropout);
        data_loss += g.value;
        add_scaled(out.d_weights, out.d_bias, g, inv_n);
        if (r1_layers.empty()) continue;
        const ForwardTrace trace = forward(net, ex.x);
        for (Index l : r1_layers) {
            const auto ul = static_cast<std::size_t>(l);
            const Vector u = g.d_act[ul].cwiseProduct(trace.y[ul]);
            const Vector c = 2.0 * u;
            const double cmax = c.cwiseAbs().maxCoeff();
            if (cmax == 0.0) continue;
            const double t = 1e-4 / cmax;
            std::vector<Vector> gains(depth + 1);
            gains[ul] = Vector::Ones(c.size()) + t * c;
            const GradientBundle up = backprop(net, ex.x, head, gains);
            gains[ul] = Vector::Ones(c.size()) - t * c;
            const GradientBundle down = backprop(net, ex.x, head, gains);
            const double scale = weights.lambda * inv_n / (2.0 * t);
            add_scaled(out.d_weights, out.d_bias, up, scale);
            add_scaled(out.d_weights, out.d_bias, down, -scale);
        }
    }
    out.data_loss = data_loss * inv_n;

    if (weights.all_zero()) {
        out.value = out.data_loss;
        return out;
    }

    out.terms = reg_terms(net, weights.lambda > 0.0 ? batch : Dataset{}, loss_cfg, weights);
    double penalty = 0.0;
    for (const auto& t : out.terms.crash_layers) {
        penalty += weights.lambda * t.r1;
        if (weights.mu > 0.0) {
            penalty += weights.mu * t.r2;
            if (with_gradient) {
                const Balance b = balance_term(net.layer(t.layer + 1).weights);
                out.d_weights[static_cast<std::size_t>(t.layer)] += weights.mu * b.grad;
            }
        }
    }
    for (const auto& t : out.terms.weight_layers) {
        penalty += t.r3 + weights.nu * t.r4;
        if (!with_gradient) continue;
        const Matrix& w = net.layer(t.layer).weights;
        Matrix& dw = out.d_weights[static_cast<std::size_t>(t.layer - 1)];
        if (weights.psi_deriv > 0.0) {
            if (w.rows() >= 2) {
                const Matrix s = sign_of(w.bottomRows(w.rows() - 1) - w.topRows(w.rows() - 1));
                dw.bottomRows(w.rows() - 1) += weights.psi_deriv * s;
                dw.topRows(w.rows() - 1) -= weights.psi_deriv * s;
            }
            if (w.cols() >= 2) {
                const double scale = weights.psi_deriv * static_cast<double>(w.cols()) / static_cast<double>(w.rows());
                const Matrix s = sign_of(w.rightCols(w.cols() - 1) - w.leftCols(w.cols() - 1));
                dw.rightCols(w.cols() - 1) += scale * s;
                dw.leftCols(w.cols() - 1) -= scale * s;
            }
        }
        if (weights.psi_smooth > 0.0) {
            const Matrix k = gaussian_smoothing_operator(w.cols(), weights.smoothing_sigma.value_or(default_smoothing_sigma(w)));
            const Matrix a = k - Matrix::Identity(w.cols(), w.cols());
            const Matrix residual = w * a.transpose();
            dw += weights.psi_smooth / static_cast<double>(w.size()) * sign_of(residual) * a;
        }
        if (weights.nu > 0.0) {
            Index row = 0;
            w.cwiseAbs().rowwise().sum().maxCoeff(&row);
            dw.row(row) += weights.nu * sign_of(w.row(row));
        }
    }
    out.penalty = penalty;
    out.value = out.data_loss + penalty;
    return out;
}

} // namespace crashcert
