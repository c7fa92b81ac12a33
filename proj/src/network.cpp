#include "crashcert/network.hpp"

#include <algorithm>
#include <string>

namespace crashcert {

std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::sigmoid:
        return "sigmoid";
    case Activation::relu:
        return "relu";
    case Activation::linear:
        break;
    }
    return "linear";
}

Activation activation_from_string(std::string_view name) {
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "relu") return Activation::relu;
    if (name == "linear") return Activation::linear;
    throw SchemaError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(LossKind k) {
    return k == LossKind::bounded_mse ? "bounded_mse" : "bounded_margin";
}

LossKind loss_kind_from_string(std::string_view name) {
    if (name == "bounded_mse" || name == "mse") return LossKind::bounded_mse;
    if (name == "bounded_margin" || name == "margin") return LossKind::bounded_margin;
    throw SchemaError("unknown loss kind '" + std::string(name) + "'");
}

Network zero_outgoing_weights(const Network& net, const CrashMask& mask) {
    check_mask(net, mask);
    if (mask.back().any()) throw DomainError("zero_outgoing_weights: output neurons have no outgoing weights");
    std::vector<Layer> layers = net.layers();
    for (Index l = 0; l < net.depth(); ++l) {
        const MaskLayer& m = mask[static_cast<std::size_t>(l)];
        Matrix& w = layers[static_cast<std::size_t>(l)].weights; // W_{l+1} reads y_l
        for (Index j = 0; j < m.size(); ++j)
            if (m[j]) w.col(j).setZero();
    }
    return Network(std::move(layers));
}

Network duplicate_neurons(const Network& net, Index l, Index k) {
    if (l < 0 || l >= net.depth()) throw DimensionError("duplicate_neurons: layer must lie in [0, L-1]");
    if (k < 1) throw DomainError("duplicate_neurons: k must be >= 1");
    std::vector<Layer> layers = net.layers();
    const Index n = net.width(l);
    if (l >= 1) {
        Layer& src = layers[static_cast<std::size_t>(l - 1)];
        Matrix w(n * k, src.weights.cols());
        Vector b(n * k);
        for (Index i = 0; i < n; ++i)
            for (Index c = 0; c < k; ++c) {
                w.row(i * k + c) = src.weights.row(i);
                b[i * k + c] = src.bias[i];
            }
        src.weights = std::move(w);
        src.bias = std::move(b);
    }
    Layer& dst = layers[static_cast<std::size_t>(l)];
    Matrix w(dst.weights.rows(), n * k);
    for (Index j = 0; j < n; ++j)
        for (Index c = 0; c < k; ++c) w.col(j * k + c) = dst.weights.col(j) / static_cast<double>(k);
    dst.weights = std::move(w);
    return Network(std::move(layers));
}

Vector duplicate_input(const Vector& x, Index k) {
    if (k < 1) throw DomainError("duplicate_input: k must be >= 1");
    Vector out(x.size() * k);
    for (Index i = 0; i < x.size(); ++i) out.segment(i * k, k).setConstant(x[i]);
    return out;
}

namespace {

Index argmax_wrong(const Vector& output, Index true_class) {
    Index best = -1;
    for (Index j = 0; j < output.size(); ++j) {
        if (j == true_class) continue;
        if (best < 0 || output[j] > output[best]) best = j;
    }
    return best;
}

void check_loss_dims(const Vector& output, const LossSpec& spec) {
    if (spec.kind == LossKind::bounded_mse) {
        if (spec.target.size() != output.size()) throw DimensionError("loss: target length does not match output");
    } else {
        if (spec.class_index < 0 || spec.class_index >= output.size())
            throw DimensionError("loss: class index " + std::to_string(spec.class_index) + " out of range");
        if (output.size() < 2) throw DimensionError("loss: margin loss needs at least two outputs");
    }
}

} // namespace

double loss(const Vector& output, const LossSpec& spec) {
    check_loss_dims(output, spec);
    if (spec.kind == LossKind::bounded_mse) {
        const double mse = (output - spec.target).squaredNorm() / static_cast<double>(output.size());
        return std::clamp(mse, 0.0, 1.0);
    }
    const Index j = argmax_wrong(output, spec.class_index);
    const double m = spec.margin_scale * (output[j] - output[spec.class_index]);
    return std::clamp(m, -1.0, 1.0);
}

Vector loss_gradient(const Vector& output, const LossSpec& spec) {
    check_loss_dims(output, spec);
    Vector g = Vector::Zero(output.size());
    if (spec.kind == LossKind::bounded_mse) {
        const double n = static_cast<double>(output.size());
        const Vector r = output - spec.target;
        if (r.squaredNorm() / n < 1.0) g = 2.0 * r / n;
        return g;
    }
    const Index j = argmax_wrong(output, spec.class_index);
    const double m = spec.margin_scale * (output[j] - output[spec.class_index]);
    if (m > -1.0 && m < 1.0) {
        g[j] = spec.margin_scale;
        g[spec.class_index] = -spec.margin_scale;
    }
    return g;
}

double head_value(const Vector& output, const Head& head) {
    if (head.kind == Head::Kind::loss) return loss(output, head.loss_spec);
    if (head.component < 0 || head.component >= output.size())
        throw DimensionError("head: output component out of range");
    return output[head.component];
}

Vector head_gradient(const Vector& output, const Head& head) {
    if (head.kind == Head::Kind::loss) return loss_gradient(output, head.loss_spec);
    if (head.component < 0 || head.component >= output.size())
        throw DimensionError("head: output component out of range");
    Vector g = Vector::Zero(output.size());
    g[head.component] = 1.0;
    return g;
}

LossSpec loss_spec_for(const Example& example, const LossConfig& config) {
    LossSpec spec;
    spec.kind = config.kind;
    spec.margin_scale = config.margin_scale;
    if (config.kind == LossKind::bounded_mse) {
        spec.target = example.target;
        return spec;
    }
    if (example.target.size() == 1) {
        spec.class_index = static_cast<Index>(std::lround(example.target[0]));
    } else {
        Eigen::Index idx = 0;
        example.target.maxCoeff(&idx);
        spec.class_index = idx;
    }
    return spec;
}

double margin_scale_for(const Network& net, const Dataset& data) {
    double widest = 0.0;
    for (const auto& ex : data) {
        const Vector out = forward(net, ex.x).output();
        widest = std::max(widest, out.maxCoeff() - out.minCoeff());
    }
    return 1.0 / (1.0 + widest);
}

Vector delta_output(const Network& net, const Vector& x, const CrashMask& mask) {
    return forward_crashed(net, x, mask).output() - forward(net, x).output();
}

double delta_head(const Network& net, const Vector& x, const CrashMask& mask, const Head& head) {
    const Vector crashed = forward_crashed(net, x, mask).output();
    const Vector clean = forward(net, x).output();
    return head_value(crashed, head) - head_value(clean, head);
}

} // namespace crashcert
