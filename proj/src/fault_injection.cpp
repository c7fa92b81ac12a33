#include "crashcert/fault_injection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace crashcert {

CrashModel CrashModel::broadcast(const Network& net, double p) {
    CrashModel c;
    c.p.assign(static_cast<std::size_t>(net.depth() + 1), p);
    c.p.back() = 0.0;
    return c;
}

void CrashModel::validate(const Network& net) const {
    if (static_cast<Index>(p.size()) != net.depth() + 1)
        throw DimensionError("crash model: expected " + std::to_string(net.depth() + 1) + " probabilities, got " +
                             std::to_string(p.size()));
    for (double v : p)
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("crash model: probabilities must lie in [0, 1]");
}

CrashModel CrashModel::restricted_to(const std::vector<Index>& layers) const {
    CrashModel out;
    out.p.assign(p.size(), 0.0);
    for (Index l : layers) {
        if (l < 0 || l >= static_cast<Index>(p.size())) throw DimensionError("crash model: layer out of range");
        out.p[static_cast<std::size_t>(l)] = p[static_cast<std::size_t>(l)];
    }
    return out;
}

std::vector<Index> CrashModel::exposed_layers() const {
    std::vector<Index> out;
    for (std::size_t l = 0; l < p.size(); ++l)
        if (p[l] > 0.0) out.push_back(static_cast<Index>(l));
    return out;
}

CrashMask sample_mask(const Network& net, const CrashModel& crash, RngStream& stream) {
    crash.validate(net);
    CrashMask mask = no_crash(net);
    for (std::size_t l = 0; l < mask.size(); ++l)
        for (Index i = 0; i < mask[l].size(); ++i) mask[l][i] = stream.uniform() < crash.p[l];
    return mask;
}

namespace {

ErrorMoments moments_from(const std::vector<double>& deltas, std::optional<double> tail_epsilon) {
    ErrorMoments m;
    const SampleStats s = sample_stats(deltas);
    m.mean = s.mean;
    m.variance = s.variance;
    m.samples = deltas.size();
    m.std_error = deltas.empty() ? 0.0 : std::sqrt(m.variance / static_cast<double>(deltas.size()));
    if (deltas.size() > 1) {
        double m2 = 0.0, m4 = 0.0;
        for (double d : deltas) {
            const double c = (d - s.mean) * (d - s.mean);
            m2 += c;
            m4 += c * c;
        }
        const double n = static_cast<double>(deltas.size());
        m2 /= n;
        m4 /= n;
        m.variance_std_error = std::sqrt(std::max(0.0, m4 - m2 * m2) / n);
    }
    if (tail_epsilon) {
        m.tail_epsilon = tail_epsilon;
        const auto hits = std::count_if(deltas.begin(), deltas.end(), [&](double d) { return d >= *tail_epsilon; });
        m.tail_freq = deltas.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(deltas.size());
    }
    return m;
}

std::uint64_t joint_stream(std::size_t input, std::size_t sample) {
    return (static_cast<std::uint64_t>(input) << 32) | static_cast<std::uint64_t>(sample);
}

Head loss_head(const Example& ex, const LossConfig& cfg) { return Head::of_loss(loss_spec_for(ex, cfg)); }

} // namespace

ErrorMoments monte_carlo_moments(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                                 const SamplingOptions& options) {
    crash.validate(net);
    if (options.samples < 2) throw DomainError("monte_carlo_moments: need at least 2 samples");
    const double clean = head_value(forward(net, x).output(), head);
    std::vector<double> deltas(options.samples);
    parallel_for(options.samples, resolve_threads(options.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            RngStream stream(options.seed, k);
            const CrashMask mask = sample_mask(net, crash, stream);
            deltas[k] = head_value(forward_crashed(net, x, mask).output(), head) - clean;
        }
    });
    return moments_from(deltas, options.tail_epsilon);
}

namespace {

struct Site {
    std::size_t layer;
    Index index;
    double p;
};

std::vector<Site> crash_sites(const Network& net, const CrashModel& crash, const std::vector<Index>& layers) {
    crash.validate(net);
    std::vector<Index> chosen = layers.empty() ? crash.exposed_layers() : layers;
    std::sort(chosen.begin(), chosen.end());
    chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
    std::vector<Site> sites;
    for (Index l : chosen) {
        if (l < 0 || l > net.depth()) throw DimensionError("exact_moments: layer out of range");
        const double p = crash.p[static_cast<std::size_t>(l)];
        if (p <= 0.0) continue;
        for (Index i = 0; i < net.width(l); ++i) sites.push_back({static_cast<std::size_t>(l), i, p});
    }
    return sites;
}

} // namespace

Index crashable_neurons(const Network& net, const CrashModel& crash, const std::vector<Index>& layers) {
    return static_cast<Index>(crash_sites(net, crash, layers).size());
}

ErrorMoments exact_moments(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                           const std::vector<Index>& layers, unsigned threads) {
    const std::vector<Site> sites = crash_sites(net, crash, layers);
    const auto n = static_cast<Index>(sites.size());
    if (n > kEnumerationCap)
        throw EnumerationInfeasible("exact enumeration infeasible: " + std::to_string(n) +
                                    " crashable neurons exceed the cap of " + std::to_string(kEnumerationCap) +
                                    " (the exact problem is NP-hard)");
    ErrorMoments out;
    out.exact = true;
    const std::uint64_t total = std::uint64_t{1} << n;
    out.samples = static_cast<std::size_t>(total);
    if (n == 0) return out;

    const double clean = head_value(forward(net, x).output(), head);
    const std::size_t chunks = static_cast<std::size_t>(std::min<std::uint64_t>(total, 64));
    std::vector<double> s1(chunks), s2(chunks);
    parallel_for(chunks, resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
        CrashMask mask = no_crash(net);
        for (std::size_t c = begin; c < end; ++c) {
            const std::uint64_t lo = total * c / chunks, hi = total * (c + 1) / chunks;
            double a = 0.0, b = 0.0;
            for (std::uint64_t s = lo; s < hi; ++s) {
                double w = 1.0;
                for (Index k = 0; k < n; ++k) {
                    const Site& site = sites[static_cast<std::size_t>(k)];
                    const bool on = (s >> k) & 1U;
                    mask[site.layer][site.index] = on;
                    w *= on ? site.p : 1.0 - site.p;
                }
                if (w == 0.0) continue;
                const double d = head_value(forward_crashed(net, x, mask).output(), head) - clean;
                a += w * d;
                b += w * d * d;
            }
            s1[c] = a;
            s2[c] = b;
        }
    });
    out.mean = pairwise_sum(s1);
    out.variance = std::max(0.0, pairwise_sum(s2) - out.mean * out.mean);
    return out;
}

Vector single_crash_deltas(const Network& net, const Vector& x, Index l, const Head& head) {
    if (l < 0 || l > net.depth()) throw DimensionError("single_crash_sweep: layer out of range");
    const double clean = head_value(forward(net, x).output(), head);
    CrashMask mask = no_crash(net);
    auto& m = mask[static_cast<std::size_t>(l)];
    Vector deltas(m.size());
    for (Index i = 0; i < m.size(); ++i) {
        m[i] = true;
        deltas[i] = head_value(forward_crashed(net, x, mask).output(), head) - clean;
        m[i] = false;
    }
    return deltas;
}

ErrorMoments single_crash_sweep(const Network& net, const Vector& x, Index l, const Head& head, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("single_crash_sweep: p must lie in [0, 1]");
    const Vector d = single_crash_deltas(net, x, l, head);
    ErrorMoments out;
    out.mean = p * d.sum();
    out.variance = p * d.squaredNorm();
    out.samples = static_cast<std::size_t>(d.size());
    out.exact = true;
    return out;
}

SuperpositionResult superposition_check(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                                        const std::vector<Index>& a, const std::vector<Index>& b,
                                        const SamplingOptions& fallback) {
    for (Index l : a)
        if (std::find(b.begin(), b.end(), l) != b.end())
            throw DomainError("superposition_check: layer subsets overlap at layer " + std::to_string(l));
    std::vector<Index> ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const CrashModel ca = crash.restricted_to(a), cb = crash.restricted_to(b), cab = crash.restricted_to(ab);

    SuperpositionResult r;
    r.exact = crashable_neurons(net, cab) <= kEnumerationCap;
    const auto run = [&](const CrashModel& c) {
        if (r.exact) return exact_moments(net, x, c, head, {}, fallback.threads);
        return monte_carlo_moments(net, x, c, head, fallback);
    };
    r.a = run(ca);
    r.b = run(cb);
    r.joint = run(cab);
    const auto rel = [](double joint, double sum) {
        const double gap = std::abs(joint - sum);
        if (gap == 0.0) return 0.0;
        return gap / std::abs(joint);
    };
    r.mean_relative_error = rel(r.joint.mean, r.a.mean + r.b.mean);
    r.variance_relative_error = rel(r.joint.variance, r.a.variance + r.b.variance);
    return r;
}

namespace {

MedianSimResult median_sim_impl(Index replicas, double epsilon, std::size_t trials, std::uint64_t seed,
                                unsigned threads, const std::function<std::uint64_t(std::size_t trial)>& trial_stream,
                                const std::function<double(std::size_t trial, RngStream& stream)>& draw) {
    if (replicas < 1 || replicas % 2 == 0)
        throw DomainError("median_replica_sim: R must be odd and >= 1 (got " + std::to_string(replicas) + ")");
    if (trials == 0) throw DomainError("median_replica_sim: need at least one trial");
    const auto R = static_cast<std::size_t>(replicas);
    std::vector<unsigned char> fail(trials);
    std::vector<std::uint32_t> base_hits(trials);
    parallel_for(trials, resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
        std::vector<double> vals(R);
        for (std::size_t t = begin; t < end; ++t) {
            std::uint32_t hits = 0;
            for (std::size_t r = 0; r < R; ++r) {
                RngStream stream(seed, trial_stream(t) * R + r);
                vals[r] = draw(t, stream);
                hits += vals[r] >= epsilon ? 1U : 0U;
            }
            std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(R / 2), vals.end());
            fail[t] = vals[R / 2] >= epsilon ? 1 : 0;
            base_hits[t] = hits;
        }
    });
    MedianSimResult out;
    out.replicas = replicas;
    out.trials = trials;
    std::size_t f = 0, b = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        f += fail[t];
        b += base_hits[t];
    }
    const double n = static_cast<double>(trials), nb = static_cast<double>(trials * R);
    out.failure_rate = static_cast<double>(f) / n;
    out.std_error = std::sqrt(out.failure_rate * (1.0 - out.failure_rate) / n);
    out.base_rate = static_cast<double>(b) / nb;
    out.base_std_error = std::sqrt(out.base_rate * (1.0 - out.base_rate) / nb);
    return out;
}

} // namespace

MedianSimResult median_replica_sim(const Network& net, const Vector& x, const CrashModel& crash, const Head& head,
                                   Index replicas, double epsilon, std::size_t trials, std::uint64_t seed,
                                   unsigned threads) {
    crash.validate(net);
    const double clean = head_value(forward(net, x).output(), head);
    const auto trial_stream = [](std::size_t t) { return static_cast<std::uint64_t>(t); };
    return median_sim_impl(replicas, epsilon, trials, seed, threads, trial_stream, [&](std::size_t, RngStream& stream) {
        const CrashMask mask = sample_mask(net, crash, stream);
        return head_value(forward_crashed(net, x, mask).output(), head) - clean;
    });
}

MedianSimResult median_replica_sim(const Network& net, const Dataset& data, const CrashModel& crash,
                                   const LossConfig& loss_cfg, Index replicas, double epsilon, std::size_t trials,
                                   std::uint64_t seed, unsigned threads) {
    crash.validate(net);
    if (data.empty()) throw DomainError("median_replica_sim: empty dataset");
    std::vector<double> clean(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        clean[i] = head_value(forward(net, data[i].x).output(), loss_head(data[i], loss_cfg));
    const std::size_t n = data.size();
    const auto trial_stream = [n](std::size_t t) { return joint_stream(t % n, t / n); };
    return median_sim_impl(replicas, epsilon, trials, seed, threads, trial_stream, [&](std::size_t t, RngStream& stream) {
        const std::size_t i = t % n;
        const CrashMask mask = sample_mask(net, crash, stream);
        return head_value(forward_crashed(net, data[i].x, mask).output(), loss_head(data[i], loss_cfg)) - clean[i];
    });
}

namespace {

std::vector<double> dataset_deltas(const Network& net, const Dataset& data, const CrashModel& crash,
                                   const std::function<Head(const Example&)>& head_of, std::size_t samples_per_input,
                                   std::uint64_t seed, unsigned threads) {
    crash.validate(net);
    if (data.empty()) throw DomainError("empty dataset");
    if (samples_per_input == 0) throw DomainError("samples per input must be positive");
    const std::size_t total = data.size() * samples_per_input;
    std::vector<double> deltas(total);
    parallel_for(data.size(), resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const Head head = head_of(data[i]);
            const double clean = head_value(forward(net, data[i].x).output(), head);
            for (std::size_t s = 0; s < samples_per_input; ++s) {
                RngStream stream(seed, joint_stream(i, s));
                const CrashMask mask = sample_mask(net, crash, stream);
                deltas[i * samples_per_input + s] =
                    head_value(forward_crashed(net, data[i].x, mask).output(), head) - clean;
            }
        }
    });
    return deltas;
}

} // namespace

TailEstimate empirical_tail(const Network& net, const Dataset& data, const CrashModel& crash,
                            const LossConfig& loss_cfg, double epsilon, std::size_t samples_per_input,
                            std::uint64_t seed, unsigned threads) {
    const auto head_of = [&](const Example& ex) { return loss_head(ex, loss_cfg); };
    const std::vector<double> deltas = dataset_deltas(net, data, crash, head_of, samples_per_input, seed, threads);
    TailEstimate t;
    t.trials = deltas.size();
    t.hits = static_cast<std::size_t>(std::count_if(deltas.begin(), deltas.end(), [&](double d) { return d >= epsilon; }));
    t.delta_hat = static_cast<double>(t.hits) / static_cast<double>(t.trials);
    t.std_error = std::sqrt(t.delta_hat * (1.0 - t.delta_hat) / static_cast<double>(t.trials));
    return t;
}

ErrorMoments monte_carlo_dataset_moments(const Network& net, const Dataset& data, const CrashModel& crash,
                                         const LossConfig& loss_cfg, std::size_t samples_per_input,
                                         std::uint64_t seed, unsigned threads) {
    const auto head_of = [&](const Example& ex) { return loss_head(ex, loss_cfg); };
    return moments_from(dataset_deltas(net, data, crash, head_of, samples_per_input, seed, threads), std::nullopt);
}

ErrorMoments monte_carlo_dataset_moments(const Network& net, const Dataset& data, const CrashModel& crash,
                                         const Head& head, std::size_t samples_per_input, std::uint64_t seed,
                                         unsigned threads) {
    const auto head_of = [&](const Example&) { return head; };
    return moments_from(dataset_deltas(net, data, crash, head_of, samples_per_input, seed, threads), std::nullopt);
}

ErrorMoments crashing_mae(const Network& net, const Dataset& data, const CrashModel& crash,
                          std::size_t samples_per_input, std::uint64_t seed, unsigned threads) {
    crash.validate(net);
    if (data.empty()) throw DomainError("crashing_mae: empty dataset");
    const std::size_t total = data.size() * samples_per_input;
    std::vector<double> errs(total);
    parallel_for(data.size(), resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t s = 0; s < samples_per_input; ++s) {
                RngStream stream(seed, joint_stream(i, s));
                const CrashMask mask = sample_mask(net, crash, stream);
                const Vector out = forward_crashed(net, data[i].x, mask).output();
                if (out.size() != data[i].target.size())
                    throw DimensionError("crashing_mae: target length does not match network output");
                errs[i * samples_per_input + s] = (out - data[i].target).cwiseAbs().mean();
            }
        }
    });
    return moments_from(errs, std::nullopt);
}

} // namespace crashcert
