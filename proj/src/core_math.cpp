#include "crashcert/core_math.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

namespace crashcert {

Vector rng_draw(RngStream stream, Index n) {
    Vector out(n);
    for (Index i = 0; i < n; ++i) out[i] = stream.uniform();
    return out;
}

SpectralEstimate spectral_norm_estimate(const Eigen::Ref<const Matrix>& w) {
    if (w.size() == 0) throw DimensionError("spectral_norm_estimate: empty matrix");

    // Deterministic start, keyed by the shape so it is never a fixed special vector.
    RngStream start(0x5eed5eedULL, static_cast<std::uint64_t>(w.rows()) * 1000003ULL +
                                       static_cast<std::uint64_t>(w.cols()));
    Vector v(w.cols());
    for (Index j = 0; j < v.size(); ++j) v[j] = 0.5 + start.uniform();
    v.normalize();

    SpectralEstimate est{0.0, 0.0, 0};
    double previous = -1.0;
    for (int it = 1; it <= 10000; ++it) {
        const Vector u = w * v;
        const Vector back = w.transpose() * u;
        const double norm_back = back.norm();
        est.lower = u.norm();
        est.upper = std::sqrt(norm_back);
        est.iterations = it;
        if (norm_back == 0.0) break; // W v == 0: W is zero on the whole iterate
        v = back / norm_back;
        if (previous > 0.0 && std::abs(est.upper - previous) <= 1e-12 * est.upper) break;
        previous = est.upper;
    }
    est.lower = (w * v).norm();
    est.upper = std::max(est.upper, est.lower);
    return est;
}

double kl_bernoulli(double a, double b) {
    if (!(a > 0.0 && a < 1.0) || !(b > 0.0 && b < 1.0))
        throw DomainError("kl_bernoulli: arguments must lie in (0,1)");
    if (a == b) return 0.0;
    const double value = a * std::log(a / b) + (1.0 - a) * std::log1p(-a) - (1.0 - a) * std::log1p(-b);
    return std::max(value, 0.0);
}

double pairwise_sum(std::span<const double> values) {
    constexpr std::size_t leaf = 32;
    if (values.size() <= leaf) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

SampleStats sample_stats(std::span<const double> values) {
    SampleStats out;
    const std::size_t n = values.size();
    if (n == 0) return out;
    out.mean = pairwise_sum(values) / static_cast<double>(n);
    if (n < 2) return out;
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = values[i] - out.mean;
        sq[i] = d * d;
    }
    out.variance = pairwise_sum(sq) / static_cast<double>(n - 1);
    return out;
}

unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("CRASHCERT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
    }
    return 1;
}

void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, n);
    if (workers == 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, &errors, t, begin, end] {
            try {
                body(begin, end);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace crashcert
