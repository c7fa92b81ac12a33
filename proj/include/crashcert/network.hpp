#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "crashcert/core_math.hpp"
#include "crashcert/errors.hpp"

namespace crashcert {

enum class Activation { sigmoid, relu, linear };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

template <typename Scalar>
Scalar activate(Activation a, Scalar z) {
    switch (a) {
    case Activation::sigmoid:
        return Scalar(1) / (Scalar(1) + std::exp(-z));
    case Activation::relu:
        return z > Scalar(0) ? z : Scalar(0);
    case Activation::linear:
        break;
    }
    return z;
}

/// phi'(z). ReLU uses 0 at z == 0.
template <typename Scalar>
Scalar activate_derivative(Activation a, Scalar z) {
    switch (a) {
    case Activation::sigmoid: {
        const Scalar s = activate(a, z);
        return s * (Scalar(1) - s);
    }
    case Activation::relu:
        return z > Scalar(0) ? Scalar(1) : Scalar(0);
    case Activation::linear:
        break;
    }
    return Scalar(1);
}

template <typename Scalar>
struct BasicLayer {
    MatrixX<Scalar> weights; ///< n_l x n_{l-1}
    VectorX<Scalar> bias;    ///< n_l
    Activation activation = Activation::sigmoid;

    Index inputs() const { return weights.cols(); }
    Index outputs() const { return weights.rows(); }
};

/// Feed-forward network y_l = phi(W_l y_{l-1} + b_l), y_0 = x, with a linear
/// last layer. Layer l (1-based, as in the math) is stored at layers()[l-1].
template <typename Scalar>
class BasicNetwork {
public:
    using Layer = BasicLayer<Scalar>;

    BasicNetwork() = default;
    explicit BasicNetwork(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

    const std::vector<Layer>& layers() const { return layers_; }

    /// Mutable access for optimizers; shapes must be preserved.
    Layer& layer(Index l) { return layers_.at(static_cast<std::size_t>(l - 1)); }
    const Layer& layer(Index l) const { return layers_.at(static_cast<std::size_t>(l - 1)); }

    /// L, the number of weight layers.
    Index depth() const { return static_cast<Index>(layers_.size()); }

    /// n_l for l in [0, L]; n_0 is the input dimension.
    Index width(Index l) const {
        if (l < 0 || l > depth()) throw DimensionError("width: layer index out of range");
        return l == 0 ? layers_.front().inputs() : layer(l).outputs();
    }
    Index input_dim() const { return width(0); }
    Index output_dim() const { return width(depth()); }

    std::vector<Index> widths() const {
        std::vector<Index> out;
        for (Index l = 0; l <= depth(); ++l) out.push_back(width(l));
        return out;
    }

    /// True when every activation is C-infinity (no ReLU).
    bool smooth() const {
        return std::none_of(layers_.begin(), layers_.end(),
                            [](const Layer& layer) { return layer.activation == Activation::relu; });
    }

    Index parameter_count() const {
        Index n = 0;
        for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
        return n;
    }

    void validate() const {
        if (layers_.empty()) throw DimensionError("network: no layers");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const Layer& layer = layers_[i];
            if (layer.weights.size() == 0) throw DimensionError("network: empty weight matrix in layer " + std::to_string(i + 1));
            if (layer.bias.size() != layer.weights.rows())
                throw DimensionError("network: bias length != weight rows in layer " + std::to_string(i + 1));
            if (i > 0 && layer.weights.cols() != layers_[i - 1].weights.rows())
                throw DimensionError("network: layer " + std::to_string(i + 1) + " input width does not match layer " +
                                     std::to_string(i) + " output width");
            if (!layer.weights.allFinite() || !layer.bias.allFinite())
                throw DomainError("network: non-finite parameter in layer " + std::to_string(i + 1));
        }
        if (layers_.back().activation != Activation::linear)
            throw DomainError("network: the last layer must be linear");
    }

private:
    std::vector<Layer> layers_;
};

using Layer = BasicLayer<double>;
using Network = BasicNetwork<double>;

/// Per-layer crash indicators, index 0 = input, index l = outputs of layer l.
/// true means the neuron is crashed (emits 0 after its activation).
using MaskLayer = Eigen::Array<bool, Eigen::Dynamic, 1>;
using CrashMask = std::vector<MaskLayer>;

template <typename Scalar>
CrashMask no_crash(const BasicNetwork<Scalar>& net) {
    CrashMask mask;
    for (Index l = 0; l <= net.depth(); ++l) mask.push_back(MaskLayer::Constant(net.width(l), false));
    return mask;
}

template <typename Scalar>
void check_mask(const BasicNetwork<Scalar>& net, const CrashMask& mask) {
    if (static_cast<Index>(mask.size()) != net.depth() + 1)
        throw DimensionError("crash mask: expected one entry per layer including the input");
    for (Index l = 0; l <= net.depth(); ++l)
        if (mask[static_cast<std::size_t>(l)].size() != net.width(l))
            throw DimensionError("crash mask: length mismatch at layer " + std::to_string(l));
}

template <typename Scalar>
struct BasicForwardTrace {
    std::vector<VectorX<Scalar>> z; ///< z[l] for l in [1, L]; z[0] is empty
    std::vector<VectorX<Scalar>> y; ///< y[l] for l in [0, L]; y[L] == z[L] unless crashed
    const VectorX<Scalar>& output() const { return y.back(); }
};
using ForwardTrace = BasicForwardTrace<double>;

/// Forward pass with a multiplicative gain on every neuron output:
/// y_l <- gain_l (.) phi(z_l). An empty gain vector means all ones. A crash
/// mask is the special case gain = 1 - xi. Real-valued gains let derivatives
/// with respect to xi be taken by the same code.
template <typename Scalar>
BasicForwardTrace<Scalar> forward_gated(const BasicNetwork<Scalar>& net, const std::type_identity_t<VectorX<Scalar>>& x,
                                        std::span<const VectorX<Scalar>> gains) {
    if (x.size() != net.input_dim()) throw DimensionError("forward: input length does not match network input");
    if (!gains.empty() && static_cast<Index>(gains.size()) != net.depth() + 1)
        throw DimensionError("forward: gains must cover layers 0..L");
    const auto gain_at = [&](Index l) -> const VectorX<Scalar>* {
        if (gains.empty()) return nullptr;
        const auto& g = gains[static_cast<std::size_t>(l)];
        if (g.size() == 0) return nullptr;
        if (g.size() != net.width(l)) throw DimensionError("forward: gain length mismatch at layer " + std::to_string(l));
        return &g;
    };

    BasicForwardTrace<Scalar> trace;
    trace.z.resize(static_cast<std::size_t>(net.depth() + 1));
    trace.y.resize(static_cast<std::size_t>(net.depth() + 1));
    trace.y[0] = x;
    if (const auto* g = gain_at(0)) trace.y[0] = trace.y[0].cwiseProduct(*g);
    for (Index l = 1; l <= net.depth(); ++l) {
        const auto& layer = net.layer(l);
        const auto ul = static_cast<std::size_t>(l);
        trace.z[ul] = layer.weights * trace.y[ul - 1] + layer.bias;
        trace.y[ul] = trace.z[ul].unaryExpr([&](Scalar v) { return activate(layer.activation, v); });
        if (const auto* g = gain_at(l)) trace.y[ul] = trace.y[ul].cwiseProduct(*g);
    }
    return trace;
}

template <typename Scalar>
BasicForwardTrace<Scalar> forward(const BasicNetwork<Scalar>& net, const std::type_identity_t<VectorX<Scalar>>& x) {
    return forward_gated<Scalar>(net, x, {});
}

template <typename Scalar>
std::vector<VectorX<Scalar>> gains_from_mask(const CrashMask& mask) {
    std::vector<VectorX<Scalar>> gains;
    gains.reserve(mask.size());
    for (const auto& m : mask) gains.push_back((!m).template cast<Scalar>().matrix());
    return gains;
}

/// Crashed neurons output 0 after their activation; crashed inputs are zeroed.
template <typename Scalar>
BasicForwardTrace<Scalar> forward_crashed(const BasicNetwork<Scalar>& net, const std::type_identity_t<VectorX<Scalar>>& x,
                                          const CrashMask& mask) {
    check_mask(net, mask);
    const auto gains = gains_from_mask<Scalar>(mask);
    return forward_gated<Scalar>(net, x, gains);
}

/// Same network with the outgoing weights of crashed neurons set to zero
/// (U_l^{ij} = -xi W^{ij}). Crashed output neurons cannot be expressed this
/// way and are rejected.
Network zero_outgoing_weights(const Network& net, const CrashMask& mask);

/// Copies every neuron of layer l (0 = input) k times and divides the
/// outgoing weights by k. The computed function is unchanged once the input
/// is passed through duplicate_input when l == 0.
Network duplicate_neurons(const Network& net, Index l, Index k);
Vector duplicate_input(const Vector& x, Index k);

// ---------------------------------------------------------------------------
// Loss layer
// ---------------------------------------------------------------------------

enum class LossKind { bounded_mse, bounded_margin };

std::string_view to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view name);

struct LossSpec {
    LossKind kind = LossKind::bounded_mse;
    Vector target;           ///< bounded_mse
    Index class_index = 0;   ///< bounded_margin
    double margin_scale = 1.0;
};

/// Bounded loss in [-1, 1]. bounded_mse = clamp(mean squared error, 0, 1);
/// bounded_margin = clamp(scale * (max wrong logit - true logit), -1, 1).
double loss(const Vector& output, const LossSpec& spec);

/// d loss / d output; zero where the clamp is active.
Vector loss_gradient(const Vector& output, const LossSpec& spec);

/// Scalar read-out used by moments, bounds, and gradients.
struct Head {
    enum class Kind { output_component, loss };
    Kind kind = Kind::output_component;
    Index component = 0;
    LossSpec loss_spec;

    static Head output(Index k) { return Head{Kind::output_component, k, {}}; }
    static Head of_loss(LossSpec spec) { return Head{Kind::loss, 0, std::move(spec)}; }
};

double head_value(const Vector& output, const Head& head);
Vector head_gradient(const Vector& output, const Head& head);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct Example {
    Vector x;
    Vector target; ///< regression targets, or a one-hot / single class index for classification
};
using Dataset = std::vector<Example>;

struct LossConfig {
    LossKind kind = LossKind::bounded_mse;
    double margin_scale = 1.0;
};

LossSpec loss_spec_for(const Example& example, const LossConfig& config);

/// 1 / (1 + largest logit range over the dataset); makes the margin loss stay
/// inside [-1, 1] on this dataset without clamping.
double margin_scale_for(const Network& net, const Dataset& data);

// ---------------------------------------------------------------------------
// Output error
// ---------------------------------------------------------------------------

/// Crashed minus clean network output.
Vector delta_output(const Network& net, const Vector& x, const CrashMask& mask);

/// Crashed minus clean head value (output component or loss).
double delta_head(const Network& net, const Vector& x, const CrashMask& mask, const Head& head);

} // namespace crashcert
