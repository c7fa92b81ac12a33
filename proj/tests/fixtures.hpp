#pragma once

#include <vector>

#include "crashcert/network.hpp"

namespace fixtures {

using namespace crashcert;

/// y = mean(x), a single linear layer of n inputs.
inline Network averaging_net(Index n) {
    Layer layer{Matrix::Constant(1, n, 1.0 / static_cast<double>(n)), Vector::Zero(1), Activation::linear};
    return Network({layer});
}

/// y = x_1 out of n inputs.
inline Network first_input_net(Index n) {
    Matrix w = Matrix::Zero(1, n);
    w(0, 0) = 1.0;
    return Network({Layer{w, Vector::Zero(1), Activation::linear}});
}

/// Random network with the given widths; hidden layers use `hidden`, the
/// last layer is linear. Weights ~ N(0, scale^2 / fan_in).
inline Network random_net(std::uint64_t seed, const std::vector<Index>& widths,
                          Activation hidden = Activation::sigmoid, double scale = 1.0) {
    RngStream rng(seed, 0xf1f1);
    std::vector<Layer> layers;
    for (std::size_t l = 1; l < widths.size(); ++l) {
        const Index rows = widths[l], cols = widths[l - 1];
        Layer layer;
        layer.weights = Matrix(rows, cols);
        layer.bias = Vector(rows);
        const double s = scale / std::sqrt(static_cast<double>(cols));
        for (Index i = 0; i < rows; ++i) {
            for (Index j = 0; j < cols; ++j) layer.weights(i, j) = s * rng.normal();
            layer.bias[i] = 0.3 * rng.normal();
        }
        layer.activation = l + 1 == widths.size() ? Activation::linear : hidden;
        layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
}

inline Vector random_vector(std::uint64_t seed, Index n, double lo = -1.0, double hi = 1.0) {
    RngStream rng(seed, 0xa11a);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = lo + (hi - lo) * rng.uniform();
    return v;
}

} // namespace fixtures
