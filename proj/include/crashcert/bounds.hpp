#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crashcert/fault_injection.hpp"
#include "crashcert/network.hpp"

namespace crashcert {

enum class BoundMethod { b1, b2, b3, b4 };

std::string_view to_string(BoundMethod m);
BoundMethod bound_method_from_string(std::string_view name);

struct LayerContribution {
    Index layer = 0;
    double p = 0.0;
    double mean = 0.0;
    double variance = 0.0;
    double r = 0.0; ///< p_l + 1/n_l
};

/// Remainder magnitudes D12 r^2 and D12 r^3 summed over crashed layers.
/// The Theta(1) constants are not known; these are magnitudes only.
struct RemainderDiagnostics {
    double d12 = 0.0;
    double mean_magnitude = 0.0;
    double variance_magnitude = 0.0;
};

struct BoundReport {
    BoundMethod method = BoundMethod::b3;
    double mean = 0.0;                 ///< b1: mean-norm bound; b2: bound for the head component; b3/b4: E delta
    Vector mean_vector;                ///< b2 per-output bound on E|delta|
    std::optional<double> variance;    ///< b3/b4
    std::optional<double> worst_case;  ///< b1: max over masks of ||delta||_2
    std::optional<double> inf_norm_mean; ///< b1: first-order bound on E||delta||_inf
    std::optional<double> lipschitz_product; ///< b1: prod_l ||W_l||_2
    std::optional<RemainderDiagnostics> remainder;
    std::vector<LayerContribution> layers;
    std::vector<std::string> warnings;
};

/// b1. Per crashed layer l the error passes through W_{l+1}..W_L, so
/// ||delta|| <= sum_l K_l ||xi_l (.) y_l|| with K_l = prod_{k>l} ||W_k||_2.
/// worst_case uses ||y_l||, mean uses sqrt(p_l) ||y_l||, and inf_norm_mean is
/// sum_l p_l n_l ||y_l||_inf prod_{k>l} ||W_k||_inf.
BoundReport bound_spectral(const Network& net, const Vector& x, const CrashModel& crash);

/// The b1 bound for one concrete mask.
double spectral_mask_bound(const Network& net, const Vector& x, const CrashMask& mask);

/// b2: E|delta_l| <= |W_l| E|delta_{l-1}| + p_l |y_l| element-wise, starting from p_0 |x|.
BoundReport bound_absolute(const Network& net, const Vector& x, const CrashModel& crash, Index component = 0);

/// b3: mean = sum_l p_l sum_i v_l^i, variance = sum_l p_l sum_i (v_l^i)^2 with
/// v = xi_derivative. Remainders are reported when d12 is given.
BoundReport bound_taylor(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                         std::optional<double> d12 = std::nullopt);

/// b3 computed from weight saliencies of W_{l+1}; the output layer, which has
/// no outgoing weights, falls back to the activation form.
BoundReport bound_taylor_weightform(const Network& net, const Vector& x, const CrashModel& crash, const Head& head);

/// b4: single_crash_sweep summed over crashed layers.
BoundReport bound_single_crash(const Network& net, const Vector& x, const CrashModel& crash, const Head& head);

/// b3 of the loss increase over a dataset. mean = E_x mean(x); variance by the
/// law of total variance, E_x var(x) + Var_x mean(x) (population over inputs).
BoundReport bound_taylor_dataset(const Network& net, const Dataset& data, const CrashModel& crash,
                                 const LossConfig& loss_cfg);

/// -sum_l p_l E_x (grad_{W_{l+1}} L, W_{l+1}), from backprop weight gradients.
/// An output-layer crash uses -(dL/dy_L, y_L).
double stationarity_mean(const Network& net, const Dataset& data, const CrashModel& crash, const LossConfig& loss_cfg);

} // namespace crashcert
