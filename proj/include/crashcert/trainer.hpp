#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "crashcert/fault_injection.hpp"
#include "crashcert/regularizer.hpp"

namespace crashcert {

/// Per-layer step size for plain SGD. `mean_field` multiplies the weight step
/// of layer l by n_l / n_{l-1} and the bias step by n_l, which keeps the
/// function-space step size independent of width for W = F / n_{l-1}
/// parametrized networks (see init_continuous).
enum class LrScaling { uniform, mean_field };

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    double learning_rate = 0.1;
    RegWeights reg;
    LossConfig loss;
    std::optional<CrashModel> dropout_p_train; ///< unscaled dropout during training
    LrScaling lr_scaling = LrScaling::uniform;
    std::uint64_t seed = 0;

    void validate(const Network& net) const;
};

struct TrainResult {
    Network net;                ///< best checkpoint by regularized training loss
    std::vector<double> history; ///< regularized loss of the clean net; [0] = initial, [e] = after epoch e
    std::size_t best_epoch = 0;
    double best_value = 0.0;
};

/// One SGD step on `batch`. With `masks` the data term runs on the crashed
/// network. Returns the regularized loss of the batch before the step.
double sgd_step(Network& net, const Dataset& batch, const TrainConfig& cfg, std::span<const CrashMask> masks = {});

/// Mini-batch SGD on the regularized loss with a seeded shuffle per epoch.
/// Dropout is applied when cfg.dropout_p_train is set. Throws TrainingDiverged
/// on a non-finite loss.
TrainResult train(Network net, const Dataset& data, const TrainConfig& cfg);

/// train() with dropout required; the crash model must be set.
TrainResult train_with_dropout(Network net, const Dataset& data, const TrainConfig& cfg);

/// Discordant pairs between `scores` and `reference` divided by n^2, i.e. the
/// mean over the full n x n pair matrix. Pairs tied in either sequence count
/// half. 0 = concordant; a full reversal gives (n - 1) / 2n, approaching 0.5;
/// random scores give about 0.25.
double rank_loss(std::span<const double> scores, std::span<const double> reference);

/// Hidden weights W^{ij} = F(t_i, t'_j) / n_{l-1} sampled from a smooth random
/// function on a uniform grid, so the network approaches a continuous limit as
/// widths grow. Output weights are positive-biased to keep the q factor of the
/// last hidden layer away from zero. The last layer is linear.
Network init_continuous(std::span<const Index> widths, std::uint64_t seed, Activation hidden = Activation::sigmoid);

/// i.i.d. N(0, 1 / fan_in) weights and zero biases; the last layer is linear.
Network init_random(std::span<const Index> widths, std::uint64_t seed, Activation hidden = Activation::sigmoid);

} // namespace crashcert
