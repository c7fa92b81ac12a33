#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "crashcert/bounds.hpp"
#include "crashcert/fault_injection.hpp"

namespace crashcert {

/// min_i W^i / max_i W^i over the row sums W^i = sum_j |W^{ij}|.
/// Throws DomainError when every row sum is zero.
double q_factor(const Matrix& w);

/// Balance of the outgoing weight mass of the neurons of layer l, i.e.
/// q_factor(W_{l+1}^T), for l in [0, L-1]. Output neurons count as balanced (1).
double layer_q_factor(const Network& net, Index l);

/// exp(-n q d_KL(alpha || p)), clamped to [0, 1]. Requires 0 < p < alpha < 1.
double perturbation_tail_delta0(Index n, double q, double alpha, double p);

/// e^2 p, the default deviation level for the perturbation bound.
double default_alpha(double p);

enum class CertMethod { chebyshev, chebyshev_plus_delta0 };
std::string_view to_string(CertMethod m);

struct Certificate {
    double epsilon = 0.0;
    double delta = 0.0;
    double t = 0.0;        ///< epsilon - E delta
    double mean = 0.0;
    double variance = 0.0;
    double delta0 = 0.0;
    CertMethod method = CertMethod::chebyshev;
};

/// delta = delta0 + Var / t^2 with t = epsilon - E delta, clamped to 1.
/// Throws InfeasibleCertificate when epsilon <= E delta.
Certificate chebyshev_certificate(double mean, double variance, double epsilon,
                                  std::optional<double> delta0 = std::nullopt);

/// Smallest odd R with delta_base^{R/2} <= delta_target; 1 when the target is
/// already met by a single network. Requires delta_base <= 1/3.
Index median_repetitions(double delta_base, double delta_target);

/// delta_base^{R/2}, the stated failure bound for a median of R replicas.
double median_failure_bound(double delta_base, Index replicas);

/// Exact P{Binomial(R, delta_base) >= (R + 1) / 2} for odd R: the failure
/// probability of the median when each replica fails independently.
double median_failure_exact(double delta_base, Index replicas);

/// Chernoff form (4 delta (1 - delta))^{R/2}, a valid upper bound on
/// median_failure_exact.
double median_failure_chernoff(double delta_base, Index replicas);

struct BinomialInterval {
    double lower = 0.0;
    double upper = 0.0;
};

/// Wilson score interval for hits out of n at normal quantile z.
BinomialInterval wilson_interval(std::size_t hits, std::size_t n, double z = 1.959963984540054);

struct LayerDelta0 {
    Index layer = 0;
    Index width = 0;
    double p = 0.0;
    double q = 0.0;
    double alpha = 0.0;
    double delta0 = 0.0;
};

struct CheckOptions {
    bool include_delta0 = true;          ///< false gives the shorter Chebyshev-only form
    std::optional<double> alpha;         ///< overrides e^2 p_l for every layer
    std::size_t samples_per_input = 200; ///< empirical cross-check; 0 skips it
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

struct FtCheck {
    Certificate certificate;
    BoundReport moments;             ///< dataset-level b3 of the loss increase
    std::vector<LayerDelta0> layers; ///< per crashed layer perturbation bounds
    double q_min = 1.0;
    std::optional<TailEstimate> empirical;
};

/// Per-layer perturbation bounds, union-bounded into a total delta0.
std::vector<LayerDelta0> layer_delta0(const Network& net, const CrashModel& crash, std::optional<double> alpha);
double total_delta0(const std::vector<LayerDelta0>& layers);

/// Certificate for the loss increase over the dataset: b3 moments, delta0
/// from the q-factors, Chebyshev, and an empirical tail cross-check.
FtCheck check_ft(const Network& net, const Dataset& data, const CrashModel& crash, const LossConfig& loss_cfg,
                 double epsilon, const CheckOptions& options = {});

} // namespace crashcert
