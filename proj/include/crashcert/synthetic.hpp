#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "crashcert/network.hpp"

namespace crashcert {

/// smooth_1d: x ~ U[-1, 1], y = 0.5 sin(pi x).
/// smooth_2d: x ~ U[-1, 1]^2, y = 0.5 sin(pi x_1) cos(pi x_2 / 2).
/// digits8x8: 64 pixels in [0, 1] drawn around 10 fixed smooth class
/// prototypes; the target is the class index.
enum class SynthKind { smooth_1d, smooth_2d, digits8x8 };

std::string_view to_string(SynthKind k);
SynthKind synth_kind_from_string(std::string_view name);

struct SynthSpec {
    SynthKind kind = SynthKind::smooth_1d;
    std::size_t n_samples = 200;
    double noise = 0.0; ///< std of additive target noise (regression) or pixel noise (digits)
    std::uint64_t seed = 0;
};

/// Example i depends only on (kind, noise, seed, i), so a larger n extends a
/// smaller dataset.
Dataset synth_dataset(const SynthSpec& spec);

/// "synth:KIND[:n[:noise[:seed]]]". Throws SchemaError on malformed specs.
SynthSpec parse_synth_spec(std::string_view text);
std::string format_synth_spec(const SynthSpec& spec);

/// bounded_margin for classification kinds, bounded_mse otherwise.
LossConfig default_loss_for(SynthKind k);

} // namespace crashcert
