#pragma once

#include <span>
#include <vector>

#include "crashcert/network.hpp"

namespace crashcert {

struct GradientBundle {
    double value = 0.0;               ///< head value at the evaluated point
    std::vector<Vector> d_act;        ///< d head / d y_l for l in [0, L]
    std::vector<Matrix> d_weights;    ///< d head / d W_l at index l-1
    std::vector<Vector> d_bias;       ///< d head / d b_l at index l-1
};

/// Reverse-mode gradients of a scalar head. Optional per-neuron gains follow
/// the convention of forward_gated; d_act is taken with respect to the gated
/// activations. ReLU uses derivative 0 at z == 0.
GradientBundle backprop(const Network& net, const Vector& x, const Head& head,
                        std::span<const Vector> gains = {});

/// v_i = d head / d xi_l^i at xi = 0, i.e. -(d head / d y_l^i) * y_l^i.
/// Layer 0 uses the inputs. l in [0, L].
Vector xi_derivative(const Network& net, const Vector& x, Index l, const Head& head);

struct WeightSaliency {
    Matrix X; ///< W_l (.) d head / d W_l
    Vector z; ///< z_j = -sum_i X_ij, equals xi_derivative(l - 1)
};

/// Saliency of weight matrix W_l, l in [1, L].
WeightSaliency weight_saliency(const Network& net, const Vector& x, Index l, const Head& head);

/// Head value and its gradient with respect to y_l when the network is
/// evaluated from layer l onward with the given activations.
struct LayerGradient {
    double value = 0.0;
    Vector grad;
};
LayerGradient gradient_from_layer(const Network& net, Index l, const Vector& y_l, const Head& head);

/// Diagonal of d^2 head / d(y_l)^2 by central differences of gradients,
/// step h_i = 1e-3 (1 + |y_l^i|). Throws DomainError for networks with ReLU.
Vector hessian_diag(const Network& net, const Vector& x, Index l, const Head& head);

struct FiniteDifferenceCheck {
    double max_relative_error = 0.0; ///< |a - b| / max(|a|, |b|, floor)
    double max_absolute_error = 0.0;
    Index parameters = 0;
};

/// Compares backprop parameter gradients with central differences,
/// step h = 1e-5 (1 + |theta|).
FiniteDifferenceCheck finite_difference_check(const Network& net, const Vector& x, const Head& head,
                                              double floor = 1e-4);

struct DerivativeDecayRow {
    Index width = 0;
    double avg_abs_derivative = 0.0; ///< avg over inputs and neurons of |d y / d y_1^i|
    double avg_abs_hessian = 0.0;    ///< avg of |H_ii| at layer 1; NaN when the net has ReLU
    double inf_norm_product = 0.0;   ///< prod_l ||W_l||_inf
};

/// Derivative-decay diagnostics at the first hidden layer for output 0.
std::vector<DerivativeDecayRow> derivative_decay_report(std::span<const Network> nets, std::span<const Vector> xs);

} // namespace crashcert
