#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "crashcert/errors.hpp"

namespace crashcert {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

enum class NormKind { inf, one, spectral_upper };

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based random stream. The draw at position k depends only on
/// (seed, stream_id, k), so any partition of work across threads that keys
/// streams by a logical index reproduces the same numbers.
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
        : seed_(seed), stream_id_(stream_id),
          key_(mix64(seed ^ mix64(stream_id ^ 0xd1b54a32d192ed03ULL))) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t position() const noexcept { return counter_; }

    std::uint64_t operator()() noexcept { return next_u64(); }
    std::uint64_t next_u64() noexcept { return mix64(key_ + mix64(counter_++)); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal by Box-Muller (one value per call, two uniforms consumed).
    double normal() noexcept {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    static constexpr std::uint64_t min() noexcept { return 0; }
    static constexpr std::uint64_t max() noexcept { return ~std::uint64_t{0}; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// n uniforms in [0,1) from a copy of `stream`; the caller's stream is untouched.
Vector rng_draw(RngStream stream, Index n);

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

struct SpectralEstimate {
    double upper;        ///< sqrt(||W^T W v||) for the final unit iterate v
    double lower;        ///< ||W v||, a certified lower bound on sigma_max
    int iterations = 0;
};

/// Power iteration on W^T W. Stops at relative change < 1e-12 or 10000 steps.
SpectralEstimate spectral_norm_estimate(const Eigen::Ref<const Matrix>& w);

template <typename Derived>
typename Derived::Scalar matrix_norm(const Eigen::MatrixBase<Derived>& w, NormKind kind) {
    if (w.size() == 0) throw DimensionError("matrix_norm: empty matrix");
    switch (kind) {
    case NormKind::inf:
        return w.cwiseAbs().rowwise().sum().maxCoeff();
    case NormKind::one:
        return w.cwiseAbs().colwise().sum().maxCoeff();
    case NormKind::spectral_upper:
        break;
    }
    const Matrix as_double = w.template cast<double>();
    return static_cast<typename Derived::Scalar>(spectral_norm_estimate(as_double).upper);
}

// ---------------------------------------------------------------------------
// Scalars
// ---------------------------------------------------------------------------

/// d_KL(a || b) between Bernoulli(a) and Bernoulli(b); both in (0,1).
double kl_bernoulli(double a, double b);

/// Pairwise (cascade) summation; the grouping depends only on the length.
double pairwise_sum(std::span<const double> values);

/// Mean and unbiased variance of `values` using pairwise sums around the mean.
struct SampleStats {
    double mean = 0.0;
    double variance = 0.0;
};
SampleStats sample_stats(std::span<const double> values);

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

/// Thread count: explicit request if > 0, else CRASHCERT_THREADS, else 1.
unsigned resolve_threads(unsigned requested);

/// Runs body(begin, end) on contiguous chunks of [0, n). Results must be
/// written to index-keyed storage so the outcome does not depend on `threads`.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t, std::size_t)>& body);

} // namespace crashcert
