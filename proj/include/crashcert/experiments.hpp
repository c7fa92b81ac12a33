#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crashcert/bounds.hpp"
#include "crashcert/trainer.hpp"

namespace crashcert {

struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct Metric {
    std::string name;
    double value = 0.0;
    double std_error = 0.0; ///< over repeats or samples; 0 when exact
    std::size_t repeats = 1;
};

struct Assertion {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ExperimentReport {
    std::string name;
    std::vector<std::pair<std::string, double>> parameters;
    std::vector<Table> tables;
    std::vector<Metric> metrics;
    std::vector<Assertion> assertions;

    bool all_pass() const;
    const Metric& metric(std::string_view name) const;
};

// ---------------------------------------------------------------------------
// Dropout sweep: networks trained with increasing dropout, ordered by
// crash-robustness metrics evaluated at p_i.
// ---------------------------------------------------------------------------

struct DropoutSweepConfig {
    double p_inference = 0.05;     ///< crash probability of the first hidden layer at inference
    std::size_t sweep_values = 10; ///< p_t evenly spaced in [0, max_factor * p_inference]
    double max_factor = 1.2;
    std::size_t repeats = 5;
    std::size_t train_samples = 200;
    std::size_t test_samples = 100;
    double pixel_noise = 0.25;
    Index hidden = 32;
    TrainConfig train = default_train();
    std::size_t mc_samples = 20; ///< crash samples per test input
    std::uint64_t seed = 0;
    unsigned threads = 0;

    static TrainConfig default_train();
};

/// Trains one network per (repeat, p_t) on the 8x8 digits stand-in with one-hot
/// squared loss. For each network it records crashing and clean MAE, the b3
/// moments of the loss, and the b1/b2 bounds. Rank losses are taken against the
/// p_t order within each repeat.
ExperimentReport run_dropout_sweep(const DropoutSweepConfig& cfg);

// ---------------------------------------------------------------------------
// Width sweep: output-error variance against hidden width.
// ---------------------------------------------------------------------------

enum class WidthSweepMode { duplication, regularized, random };
std::string_view to_string(WidthSweepMode m);
WidthSweepMode width_sweep_mode_from_string(std::string_view name);

struct WidthSweepConfig {
    WidthSweepMode mode = WidthSweepMode::regularized;
    std::vector<Index> widths{8, 16, 32, 64};
    double p = 0.05; ///< crash probability of the hidden layer
    std::size_t repeats = 3;
    std::size_t data_samples = 40;
    std::size_t mc_samples = 2000; ///< per input
    TrainConfig train = default_train();
    RegWeights reg = default_reg();
    bool train_random = false; ///< random mode: train with uniform lr instead of evaluating at init
    std::uint64_t seed = 0;
    unsigned threads = 0;

    static TrainConfig default_train();
    static RegWeights default_reg();
};

/// duplication: a base network of width widths[0] duplicated to each width.
/// regularized: init_continuous + continuity-regularized mean-field training.
/// random: init_random, evaluated at initialization unless train_random.
/// The slope of log Var against log n is fit per repeat and averaged.
ExperimentReport run_width_sweep(const WidthSweepConfig& cfg);

// ---------------------------------------------------------------------------
// Regularizer comparison: dropout vs variance regularization vs baseline.
// ---------------------------------------------------------------------------

struct RegularizerComparisonConfig {
    double p_inference = 0.05;
    double lambda = 1.0;                            ///< for the paired comparison
    std::vector<double> lambda_sweep{0.0, 0.1, 1.0, 10.0};
    Index hidden = 32;
    std::size_t data_samples = 60;
    std::size_t repeats = 3;
    std::size_t mc_samples = 500;
    TrainConfig train = default_train();
    std::uint64_t seed = 0;
    unsigned threads = 0;

    static TrainConfig default_train();
};

ExperimentReport run_regularizer_comparison(const RegularizerComparisonConfig& cfg);

// ---------------------------------------------------------------------------
// Bound table: b1..b4 against exact moments on small random networks.
// ---------------------------------------------------------------------------

struct BoundTableConfig {
    std::size_t networks = 10;
    std::size_t inputs = 5;
    std::vector<Index> widths{4, 6, 6, 1}; ///< crashes hit both hidden layers (12 neurons)
    std::vector<double> p_grid{1e-3, 1e-2, 5e-2};
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

/// Columns per (network, input, p): exact mean and std, b1..b4 values and the
/// relative errors of b3/b4 mean and std. Rank losses of each bound against
/// |E delta| are reported per p.
ExperimentReport run_bound_table(const BoundTableConfig& cfg);

/// Least-squares slope of log y against log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// Converts class-index targets to one-hot vectors of length `classes`.
Dataset one_hot(const Dataset& data, Index classes);

} // namespace crashcert
