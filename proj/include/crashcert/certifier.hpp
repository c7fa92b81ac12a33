#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "crashcert/guarantees.hpp"
#include "crashcert/trainer.hpp"

namespace crashcert {

struct CertifyConfig {
    double epsilon = 9e-3;
    double delta_prime = 1e-5;
    double complexity_C = 0.0;        ///< bound on the measured R3; must be set by the caller
    std::vector<Index> initial_widths; ///< n_0 .. n_L; hidden widths grow, n_0 and n_L stay fixed
    std::size_t max_iterations = 50;
    Index width_increment = 100;
    double knob_multiplier = 2.0;   ///< mu and psi
    double lambda_multiplier = 2.0;
    double q_threshold = 1e-2;
    double delta_threshold = 1.0 / 3.0;
    RegWeights initial_reg = default_initial_reg();
    TrainConfig train;              ///< reg and dropout fields are overwritten per iteration
    CheckOptions check;             ///< empirical cross-check is skipped inside the loop
    Activation hidden = Activation::sigmoid;
    std::uint64_t seed = 0;

    static RegWeights default_initial_reg();
    void validate() const;
};

enum class CertStatus { certified, infeasible, iteration_cap };
std::string_view to_string(CertStatus s);

/// Knob changed at the end of a certification iteration.
enum class CertAction { increase_mu, increase_width, increase_psi, infeasible, increase_width_and_lambda, certified };
std::string_view to_string(CertAction a);

struct IterationRecord {
    std::size_t iteration = 0;
    std::vector<Index> widths;
    RegWeights reg;
    double train_loss = 0.0;
    double q = 0.0;      ///< minimum over crash-exposed layers
    double delta0 = 0.0; ///< union bound over crash-exposed layers
    double r3 = 0.0;     ///< sum over weight layers of C1 + C2 + C3
    double mean = 0.0;   ///< dataset b3 E delta of the loss
    double variance = 0.0;
    double delta = 0.0;  ///< Chebyshev (+ delta0) certificate; NaN when not reached
    CertAction action = CertAction::certified;
};

struct CertificationResult {
    CertStatus status = CertStatus::iteration_cap;
    Index replicas = 0; ///< R for the median system; 0 unless certified
    std::vector<Index> widths;
    RegWeights reg;
    Certificate certificate;
    Network net;        ///< last trained network
    std::vector<IterationRecord> log;
};

/// Train, measure q -> delta0 -> R3 -> E delta -> delta in that order and
/// adjust exactly one knob per failed check until the single-network
/// certificate reaches delta <= 1/3; then pick R for the median system.
CertificationResult certify(const Dataset& data, const LossConfig& loss_cfg, const CrashModel& crash,
                            const CertifyConfig& cfg);

struct ValidationPoint {
    Index replicas = 1;
    std::size_t trials = 0;
    std::size_t hits = 0;
    double delta_hat = 0.0;
    BinomialInterval ci;
    double stated_bound = 0.0; ///< delta^{R/2}
};

struct ValidationReport {
    ValidationPoint final;              ///< at the certified R
    std::vector<ValidationPoint> decay; ///< R = 1, 3, ... up to the certified R
    double delta_target = 0.0;
    bool pass = false;                  ///< Wilson upper bound at R <= 10 delta'
};

/// Monte Carlo failure rate of the R-median system over the dataset with
/// Wilson 95% intervals, plus the decay series for smaller odd R.
ValidationReport replicate_and_validate(const CertificationResult& result, const Dataset& data,
                                        const CrashModel& crash, const LossConfig& loss_cfg, double epsilon,
                                        double delta_prime, std::size_t trials, std::uint64_t seed,
                                        unsigned threads = 0);

} // namespace crashcert
