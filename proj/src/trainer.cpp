#include "crashcert/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace crashcert {

namespace {

constexpr std::uint64_t kShuffleKey = 0x53485546464C4531ULL;
constexpr std::uint64_t kDropoutKey = 0x44524F504F555431ULL;

bool all_finite(const RegularizedLoss& rl) {
    if (!std::isfinite(rl.value)) return false;
    for (const Matrix& m : rl.d_weights)
        if (!m.allFinite()) return false;
    for (const Vector& v : rl.d_bias)
        if (!v.allFinite()) return false;
    return true;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream rng(seed ^ kShuffleKey, epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

} // namespace

void TrainConfig::validate(const Network& net) const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("train: learning_rate must be positive");
    if (batch_size == 0) throw DomainError("train: batch_size must be >= 1");
    reg.validate();
    if (dropout_p_train) dropout_p_train->validate(net);
}

double sgd_step(Network& net, const Dataset& batch, const TrainConfig& cfg, std::span<const CrashMask> masks) {
    const RegularizedLoss rl = regularized_loss(net, batch, cfg.loss, cfg.reg, true, masks);
    if (!all_finite(rl))
        throw TrainingDiverged("training diverged: non-finite loss or gradient (loss = " + std::to_string(rl.value) + ")");
    for (Index l = 1; l <= net.depth(); ++l) {
        Layer& layer = net.layer(l);
        double w_rate = cfg.learning_rate;
        double b_rate = cfg.learning_rate;
        if (cfg.lr_scaling == LrScaling::mean_field) {
            const auto fan_out = static_cast<double>(layer.weights.rows());
            w_rate *= fan_out / static_cast<double>(layer.weights.cols());
            b_rate *= fan_out;
        }
        const auto k = static_cast<std::size_t>(l - 1);
        layer.weights -= w_rate * rl.d_weights[k];
        layer.bias -= b_rate * rl.d_bias[k];
    }
    return rl.value;
}

TrainResult train(Network net, const Dataset& data, const TrainConfig& cfg) {
    if (data.empty()) throw DomainError("train: empty dataset");
    net.validate();
    cfg.validate(net);

    auto evaluate = [&](std::size_t epoch) {
        const double v = regularized_loss(net, data, cfg.loss, cfg.reg, false).value;
        if (!std::isfinite(v))
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": loss = " + std::to_string(v));
        return v;
    };

    TrainResult result;
    result.history.push_back(evaluate(0));
    result.best_value = result.history.front();
    result.net = net;

    const std::size_t n = data.size();
    Dataset batch;
    std::vector<CrashMask> masks;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = epoch_order(n, cfg.seed, epoch);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            batch.clear();
            masks.clear();
            for (std::size_t pos = start; pos < stop; ++pos) {
                batch.push_back(data[order[pos]]);
                if (cfg.dropout_p_train) {
                    RngStream stream(cfg.seed ^ kDropoutKey, (static_cast<std::uint64_t>(epoch) << 32) | pos);
                    masks.push_back(sample_mask(net, *cfg.dropout_p_train, stream));
                }
            }
            try {
                sgd_step(net, batch, cfg, masks);
            } catch (const TrainingDiverged& e) {
                throw TrainingDiverged(std::string(e.what()) + " at epoch " + std::to_string(epoch));
            }
        }
        const double v = evaluate(epoch);
        result.history.push_back(v);
        if (v < result.best_value) {
            result.best_value = v;
            result.best_epoch = epoch;
            result.net = net;
        }
    }
    return result;
}

TrainResult train_with_dropout(Network net, const Dataset& data, const TrainConfig& cfg) {
    if (!cfg.dropout_p_train) throw DomainError("train_with_dropout: dropout_p_train is not set");
    return train(std::move(net), data, cfg);
}

double rank_loss(std::span<const double> scores, std::span<const double> reference) {
    if (scores.size() != reference.size()) throw DimensionError("rank_loss: length mismatch");
    if (scores.size() < 2) throw DomainError("rank_loss: need at least two items");
    const std::size_t n = scores.size();
    double discordant = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double a = scores[i] - scores[j];
            const double b = reference[i] - reference[j];
            if (a == 0.0 || b == 0.0)
                discordant += 0.5;
            else if ((a > 0.0) != (b > 0.0))
                discordant += 1.0;
        }
    return discordant / static_cast<double>(n * n);
}

namespace {

constexpr int kModes = 4;

/// Smooth random function on [0,1]^2 as a truncated cosine series with
/// coefficients decaying like 1 / (1 + a + b).
struct SmoothField {
    Eigen::Matrix<double, kModes, kModes> c;

    SmoothField(RngStream& rng, double amplitude) {
        for (int a = 0; a < kModes; ++a)
            for (int b = 0; b < kModes; ++b) c(a, b) = amplitude * rng.normal() / (1.0 + a + b);
    }

    double operator()(double t, double s) const {
        double v = 0.0;
        for (int a = 0; a < kModes; ++a)
            for (int b = 0; b < kModes; ++b)
                v += c(a, b) * std::cos(std::numbers::pi * a * t) * std::cos(std::numbers::pi * b * s);
        return v;
    }
};

void check_widths(std::span<const Index> widths) {
    if (widths.size() < 2) throw DimensionError("init: need at least input and output widths");
    for (Index w : widths)
        if (w < 1) throw DimensionError("init: widths must be >= 1");
}

} // namespace

Network init_continuous(std::span<const Index> widths, std::uint64_t seed, Activation hidden) {
    check_widths(widths);
    std::vector<Layer> layers;
    const std::size_t depth = widths.size() - 1;
    for (std::size_t l = 1; l <= depth; ++l) {
        const Index rows = widths[l];
        const Index cols = widths[l - 1];
        const bool last = l == depth;
        RngStream rng(seed, l);
        const SmoothField field(rng, last ? 0.3 : 2.0);
        const SmoothField bias_field(rng, last ? 0.0 : 1.0);
        Layer layer{Matrix(rows, cols), Vector(rows), last ? Activation::linear : hidden};
        for (Index i = 0; i < rows; ++i) {
            const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(rows);
            for (Index j = 0; j < cols; ++j) {
                const double s = (static_cast<double>(j) + 0.5) / static_cast<double>(cols);
                layer.weights(i, j) = ((last ? 1.0 : 0.0) + field(t, s)) / static_cast<double>(cols);
            }
            layer.bias[i] = bias_field(t, 0.0);
        }
        layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
}

Network init_random(std::span<const Index> widths, std::uint64_t seed, Activation hidden) {
    check_widths(widths);
    std::vector<Layer> layers;
    const std::size_t depth = widths.size() - 1;
    for (std::size_t l = 1; l <= depth; ++l) {
        RngStream rng(seed, l);
        const double scale = 1.0 / std::sqrt(static_cast<double>(widths[l - 1]));
        Layer layer{Matrix(widths[l], widths[l - 1]), Vector::Zero(widths[l]), l == depth ? Activation::linear : hidden};
        for (Index i = 0; i < layer.weights.rows(); ++i)
            for (Index j = 0; j < layer.weights.cols(); ++j) layer.weights(i, j) = scale * rng.normal();
        layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
}

} // namespace crashcert
