#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "crashcert/network.hpp"

namespace crashcert {

/// Per-layer crash probabilities, index 0 = input, index L = output.
struct CrashModel {
    std::vector<double> p;

    /// p for layers 0..L-1 and 0 for the output layer.
    static CrashModel broadcast(const Network& net, double p);

    void validate(const Network& net) const;

    /// Same model with p zeroed outside `layers`.
    CrashModel restricted_to(const std::vector<Index>& layers) const;

    /// Layers with p_l > 0.
    std::vector<Index> exposed_layers() const;
};

/// One uniform is drawn per neuron in every layer regardless of p, so masks
/// drawn from the same stream are coupled across crash models.
CrashMask sample_mask(const Network& net, const CrashModel& crash, RngStream& stream);

struct ErrorMoments {
    double mean = 0.0;
    double variance = 0.0;
    double std_error = 0.0; ///< sqrt(variance / samples); 0 when exact
    double variance_std_error = 0.0; ///< sqrt((m4 - m2^2) / samples); 0 when exact
    std::size_t samples = 0;
    bool exact = false;
    std::optional<double> tail_epsilon;
    std::optional<double> tail_freq; ///< empirical P{delta >= tail_epsilon}
};

struct SamplingOptions {
    std::size_t samples = 10000;
    std::uint64_t seed = 0;
    unsigned threads = 0; ///< 0 = CRASHCERT_THREADS or 1
    std::optional<double> tail_epsilon;
};

/// Unbiased sample moments of the head error over i.i.d. masks. Sample k
/// uses RngStream(seed, k), so the result does not depend on the thread count.
ErrorMoments monte_carlo_moments(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                                 const SamplingOptions& options);

inline constexpr Index kEnumerationCap = 24;

/// Exact moments by weighted enumeration of all crash configurations of the
/// neurons in `layers` (all exposed layers when empty). Population variance.
/// Throws EnumerationInfeasible beyond kEnumerationCap crashable neurons.
ErrorMoments exact_moments(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                           const std::vector<Index>& layers = {}, unsigned threads = 0);

/// Number of neurons exact_moments would enumerate.
Index crashable_neurons(const Network& net, const CrashModel& crash, const std::vector<Index>& layers = {});

/// First-order moments from single-neuron crashes of layer l:
/// mean = p sum_i delta_i, variance = p sum_i delta_i^2 (the (p sum delta_i)^2
/// term is second order and omitted).
ErrorMoments single_crash_sweep(const Network& net, const Vector& x, Index l, const Head& head, double p);

/// Per-neuron single-crash errors delta_i for layer l.
Vector single_crash_deltas(const Network& net, const Vector& x, Index l, const Head& head);

struct SuperpositionResult {
    ErrorMoments a, b, joint;
    double mean_relative_error = 0.0;     ///< |m_ab - m_a - m_b| / |m_ab|
    double variance_relative_error = 0.0; ///< |v_ab - v_a - v_b| / v_ab
    bool exact = false;
};

/// Additivity of the error moments across disjoint layer subsets. Exact
/// enumeration when the joint subset fits under the cap, Monte Carlo otherwise.
SuperpositionResult superposition_check(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                                        const std::vector<Index>& a, const std::vector<Index>& b,
                                        const SamplingOptions& fallback = {});

struct MedianSimResult {
    Index replicas = 1;
    std::size_t trials = 0;
    double failure_rate = 0.0; ///< P{median of R head errors >= epsilon}
    double std_error = 0.0;
    double base_rate = 0.0;    ///< single-replica P{delta >= epsilon} over all draws
    double base_std_error = 0.0;
};

/// Empirical failure probability of the median of R independent crashed
/// replicas. Trial t, replica r uses RngStream(seed, t * R + r). R must be odd.
MedianSimResult median_replica_sim(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                                   Index replicas, double epsilon, std::size_t trials, std::uint64_t seed,
                                   unsigned threads = 0);

/// Same over a dataset with the loss as head. Trial t uses input i = t mod |data|
/// and sample s = t / |data|; replica r draws from stream ((i << 32) | s) * R + r,
/// so R = 1 with |data| * k trials reproduces empirical_tail with k samples.
MedianSimResult median_replica_sim(const Network& net, const Dataset& data, const CrashModel& crash,
                                   const LossConfig& loss_cfg, Index replicas, double epsilon, std::size_t trials,
                                   std::uint64_t seed, unsigned threads = 0);

struct TailEstimate {
    double delta_hat = 0.0;
    double std_error = 0.0;
    std::size_t trials = 0;
    std::size_t hits = 0;
};

/// Empirical P{loss increase >= epsilon} over inputs and crashes. Input i,
/// sample s uses RngStream(seed, (i << 32) | s).
TailEstimate empirical_tail(const Network& net, const Dataset& data, const CrashModel& crash,
                            const LossConfig& loss_cfg, double epsilon, std::size_t samples_per_input,
                            std::uint64_t seed, unsigned threads = 0);

/// Joint Monte Carlo moments of the loss increase over inputs and crashes,
/// same stream layout as empirical_tail.
ErrorMoments monte_carlo_dataset_moments(const Network& net, const Dataset& data, const CrashModel& crash,
                                         const LossConfig& loss_cfg, std::size_t samples_per_input,
                                         std::uint64_t seed, unsigned threads = 0);

/// Same with a fixed head (typically an output component) for every input.
ErrorMoments monte_carlo_dataset_moments(const Network& net, const Dataset& data, const CrashModel& crash,
                                         const Head& head, std::size_t samples_per_input, std::uint64_t seed,
                                         unsigned threads = 0);

/// Mean absolute error of the crashed network against the targets, averaged
/// over inputs and crashes (clean MAE when p = 0).
ErrorMoments crashing_mae(const Network& net, const Dataset& data, const CrashModel& crash,
                          std::size_t samples_per_input, std::uint64_t seed, unsigned threads = 0);

} // namespace crashcert
