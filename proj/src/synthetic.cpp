#include "crashcert/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

namespace crashcert {

namespace {

constexpr std::uint64_t kPrototypeSeed = 0x6469676974733838ULL;
constexpr int kClasses = 10;
constexpr int kSide = 8;

/// Class prototype k: a sum of a few random Gaussian blobs on the 8x8 grid,
/// rescaled to [0, 1]. Fixed across seeds so every split shares its classes.
const std::vector<Vector>& prototypes() {
    static const std::vector<Vector> protos = [] {
        std::vector<Vector> out;
        for (int k = 0; k < kClasses; ++k) {
            RngStream rng(kPrototypeSeed, static_cast<std::uint64_t>(k));
            Vector img = Vector::Zero(kSide * kSide);
            for (int blob = 0; blob < 3; ++blob) {
                const double cx = 1.0 + 5.0 * rng.uniform();
                const double cy = 1.0 + 5.0 * rng.uniform();
                const double r = 1.0 + 1.5 * rng.uniform();
                for (int y = 0; y < kSide; ++y)
                    for (int x = 0; x < kSide; ++x) {
                        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                        img[y * kSide + x] += std::exp(-0.5 * d2 / (r * r));
                    }
            }
            img /= img.maxCoeff();
            out.push_back(std::move(img));
        }
        return out;
    }();
    return protos;
}

Example make_example(const SynthSpec& spec, std::size_t i) {
    RngStream rng(spec.seed, i);
    Example ex;
    switch (spec.kind) {
    case SynthKind::smooth_1d: {
        const double x = 2.0 * rng.uniform() - 1.0;
        ex.x = Vector::Constant(1, x);
        ex.target = Vector::Constant(1, 0.5 * std::sin(std::numbers::pi * x) + spec.noise * rng.normal());
        break;
    }
    case SynthKind::smooth_2d: {
        const double a = 2.0 * rng.uniform() - 1.0;
        const double b = 2.0 * rng.uniform() - 1.0;
        ex.x = Vector{{a, b}};
        ex.target = Vector::Constant(
            1, 0.5 * std::sin(std::numbers::pi * a) * std::cos(0.5 * std::numbers::pi * b) + spec.noise * rng.normal());
        break;
    }
    case SynthKind::digits8x8: {
        const auto k = static_cast<int>(rng.below(kClasses));
        ex.x = prototypes()[static_cast<std::size_t>(k)];
        for (Index p = 0; p < ex.x.size(); ++p) ex.x[p] = std::clamp(ex.x[p] + spec.noise * rng.normal(), 0.0, 1.0);
        ex.target = Vector::Constant(1, static_cast<double>(k));
        break;
    }
    }
    return ex;
}

} // namespace

std::string_view to_string(SynthKind k) {
    switch (k) {
    case SynthKind::smooth_1d: return "smooth-1d";
    case SynthKind::smooth_2d: return "smooth-2d";
    case SynthKind::digits8x8: return "digits8x8";
    }
    return "?";
}

SynthKind synth_kind_from_string(std::string_view name) {
    for (SynthKind k : {SynthKind::smooth_1d, SynthKind::smooth_2d, SynthKind::digits8x8})
        if (to_string(k) == name) return k;
    throw SchemaError("unknown synthetic dataset kind '" + std::string(name) +
                      "' (expected smooth-1d, smooth-2d or digits8x8)");
}

Dataset synth_dataset(const SynthSpec& spec) {
    if (spec.n_samples == 0) throw DomainError("synth_dataset: n_samples must be >= 1");
    if (!(spec.noise >= 0.0)) throw DomainError("synth_dataset: noise must be non-negative");
    Dataset out;
    out.reserve(spec.n_samples);
    for (std::size_t i = 0; i < spec.n_samples; ++i) out.push_back(make_example(spec, i));
    return out;
}

namespace {

template <typename T>
T parse_number(std::string_view field, std::string_view what, std::string_view text) {
    T value{};
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw SchemaError("synthetic spec '" + std::string(text) + "': bad " + std::string(what) + " '" +
                          std::string(field) + "'");
    return value;
}

} // namespace

SynthSpec parse_synth_spec(std::string_view text) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t colon = text.find(':', start);
        parts.push_back(text.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start));
        if (colon == std::string_view::npos) break;
        start = colon + 1;
    }
    if (parts.size() < 2 || parts.size() > 5 || parts[0] != "synth")
        throw SchemaError("synthetic spec '" + std::string(text) + "': expected synth:KIND[:n[:noise[:seed]]]");
    SynthSpec spec;
    spec.kind = synth_kind_from_string(parts[1]);
    if (parts.size() > 2) spec.n_samples = parse_number<std::size_t>(parts[2], "sample count", text);
    if (parts.size() > 3) spec.noise = parse_number<double>(parts[3], "noise", text);
    if (parts.size() > 4) spec.seed = parse_number<std::uint64_t>(parts[4], "seed", text);
    return spec;
}

std::string format_synth_spec(const SynthSpec& spec) {
    std::ostringstream os;
    os.precision(17);
    os << "synth:" << to_string(spec.kind) << ':' << spec.n_samples << ':' << spec.noise << ':' << spec.seed;
    return os.str();
}

LossConfig default_loss_for(SynthKind k) {
    return k == SynthKind::digits8x8 ? LossConfig{LossKind::bounded_margin, 1.0} : LossConfig{LossKind::bounded_mse, 1.0};
}

} // namespace crashcert
