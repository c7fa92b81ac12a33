#pragma once

#include <optional>
#include <span>
#include <vector>

#include "crashcert/network.hpp"

namespace crashcert {

struct RegWeights {
    double lambda = 0.0;     ///< variance term R1
    double mu = 0.0;         ///< balance term R2
    double psi_deriv = 0.0;  ///< multiplies C1 + C2
    double psi_smooth = 0.0; ///< multiplies C3
    double nu = 0.0;         ///< infinity norm term
    std::optional<double> smoothing_sigma; ///< C3 kernel width; default max(1, cols / 32)
    std::vector<Index> layers; ///< crash layers for R1 and R2; empty = 0..L-1

    bool all_zero() const { return lambda == 0.0 && mu == 0.0 && psi_deriv == 0.0 && psi_smooth == 0.0 && nu == 0.0; }
    void validate() const;
};

inline constexpr double kBalanceCap = 1e12;

/// sum_ij |W^{i+1,j} - W^{ij}|; 0 for a single row.
double continuity_c1(const Matrix& w);

/// (cols / rows) sum_ij |W^{ij} - W^{i,j+1}|; 0 for a single column.
double continuity_c2(const Matrix& w);

/// Mean absolute residual between each row and its Gaussian-smoothed version
/// (kernel truncated at 3 sigma, half-sample reflected boundary).
double continuity_c3(const Matrix& w, double sigma);

double default_smoothing_sigma(const Matrix& w);

/// Row-smoothing operator K (cols x cols): the smoothed row is K w.
Matrix gaussian_smoothing_operator(Index n, double sigma);

struct CrashLayerTerms {
    Index layer = 0;
    double r1 = 0.0; ///< batch mean of sum_i (dL/dy_l^i y_l^i)^2
    double r2 = 0.0; ///< (max/min outgoing row sum)^2, capped at kBalanceCap
};

struct WeightLayerTerms {
    Index layer = 0; ///< weight matrix index in [1, L]
    double c1 = 0.0, c2 = 0.0, c3 = 0.0;
    double r3 = 0.0; ///< psi_deriv (C1 + C2) + psi_smooth C3
    double r4 = 0.0; ///< ||W||_inf
};

struct RegTerms {
    std::vector<CrashLayerTerms> crash_layers;
    std::vector<WeightLayerTerms> weight_layers;
};

RegTerms reg_terms(const Network& net, const Dataset& batch, const LossConfig& loss_cfg, const RegWeights& weights);

struct RegularizedLoss {
    double value = 0.0;     ///< data loss + penalty
    double data_loss = 0.0; ///< batch mean loss
    double penalty = 0.0;
    std::vector<Matrix> d_weights; ///< index l-1
    std::vector<Vector> d_bias;
    RegTerms terms;
};

/// L + lambda sum R1 + mu sum R2 + sum R3 + nu sum ||W||_inf over the batch.
/// The R1 gradient is a finite-difference Hessian-vector product taken on a
/// per-neuron gain: grad sum_i c_i u_i = [grad G(1 + t c) - grad G(1 - t c)] / 2t,
/// with u_i = dL/dy^i y^i, c = 2u frozen and t ||c||_inf = 1e-4.
/// When `masks` is non-empty (one per example) the data term is evaluated on
/// the crashed network, which is unscaled dropout; penalties use the clean one.
RegularizedLoss regularized_loss(const Network& net, const Dataset& batch, const LossConfig& loss_cfg,
                                 const RegWeights& weights, bool with_gradient = true,
                                 std::span<const CrashMask> masks = {});

} // namespace crashcert
