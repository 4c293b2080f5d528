#pragma once

// Seedable random streams and the scalar/discrete samplers used by the Gibbs
// chain. Every sampler draws only from the RngStream it is handed, so a fixed
// (seed, stream_id, call sequence) reproduces the same draws on any platform.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "softplus/error.hpp"

namespace softplus::dist {

class RngStream {
  public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
        : seed_(seed), stream_id_(stream_id) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream_id),
                          static_cast<std::uint32_t>(stream_id >> 32), 0x5f3759dfu};
        engine_.seed(seq);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1); safe to take logs of.
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal via the Marsaglia polar method (the spare is cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Gamma(shape, scale) with mean shape*scale. Marsaglia-Tsang for shape >= 1;
/// shape < 1 boosts through Gamma(shape + 1) * U^(1/shape), evaluated in the
/// log domain. Results that underflow are clamped to the smallest normal
/// double so callers always see a positive value.
inline double sample_gamma(double shape, double scale, RngStream& rng) {
    if (!(shape > 0.0 && std::isfinite(shape)) || !(scale > 0.0 && std::isfinite(scale))) {
        std::ostringstream msg;
        msg << "sample_gamma: shape and scale must be positive and finite, got " << shape << ", " << scale;
        throw ParameterError(msg.str());
    }
    if (shape < 1.0) {
        const double g = sample_gamma(shape + 1.0, 1.0, rng);
        const double log_x = std::log(g) + std::log(rng.uniform_open()) / shape + std::log(scale);
        return std::max(std::exp(log_x), std::numeric_limits<double>::min());
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform_open();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2 || std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
            return std::max(d * v * scale, std::numeric_limits<double>::min());
        }
    }
}

/// Poisson(lambda). Sequential inversion below 10, Hoermann's PTRS above.
inline std::uint64_t sample_poisson(double lambda, RngStream& rng) {
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "sample_poisson: rate must be finite and nonnegative");
    if (lambda == 0.0) return 0;
    if (lambda < 10.0) {
        const double u = rng.uniform();
        double p = std::exp(-lambda);
        double cdf = p;
        std::uint64_t k = 0;
        while (u > cdf && k < 1000) {
            ++k;
            p *= lambda / static_cast<double>(k);
            cdf += p;
        }
        return k;
    }
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = rng.uniform() - 0.5;
        const double v = rng.uniform_open();
        const double us = 0.5 - std::fabs(u);
        const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
        if (k < 0.0 || (us < 0.013 && v > us)) continue;
        if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
            -lambda + k * loglam - std::lgamma(k + 1.0)) {
            return static_cast<std::uint64_t>(k);
        }
    }
}

struct TruncatedPoissonStats {
    std::uint64_t proposals = 0;
    std::uint64_t accepted = 0;
    double acceptance_rate() const { return proposals == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposals); }
};

/// Zero-truncated Poisson, m >= 1. Rates >= 1 reject zeros from Pois(lambda)
/// (acceptance 1 - e^-lambda, worst case 63.2% at lambda = 1); rates below 1
/// invert the truncated PMF directly.
inline std::uint64_t sample_truncated_poisson(double lambda, RngStream& rng, TruncatedPoissonStats* stats = nullptr) {
    detail::require(lambda > 0.0 && std::isfinite(lambda), "sample_truncated_poisson: rate must be positive");
    if (lambda >= 1.0) {
        for (;;) {
            const auto m = sample_poisson(lambda, rng);
            if (stats) ++stats->proposals;
            if (m > 0) {
                if (stats) ++stats->accepted;
                return m;
            }
        }
    }
    if (stats) {
        ++stats->proposals;
        ++stats->accepted;
    }
    const double u = rng.uniform();
    double p = lambda / std::expm1(lambda);
    double cdf = p;
    std::uint64_t m = 1;
    while (u > cdf && m < 1000) {
        ++m;
        p *= lambda / static_cast<double>(m);
        cdf += p;
    }
    return m;
}

/// Binomial(n, p), exact. Counts successes by skipping geometric gaps, so the
/// cost is O(n * min(p, 1 - p)).
inline std::uint64_t sample_binomial(std::uint64_t n, double p, RngStream& rng) {
    detail::require(p >= 0.0 && p <= 1.0, "sample_binomial: p must lie in [0, 1]");
    if (n == 0 || p == 0.0) return 0;
    if (p == 1.0) return n;
    if (p > 0.5) return n - sample_binomial(n, 1.0 - p, rng);
    if (n <= 16) {
        std::uint64_t c = 0;
        for (std::uint64_t i = 0; i < n; ++i) c += rng.uniform() < p ? 1 : 0;
        return c;
    }
    const double log_q = std::log1p(-p);
    std::uint64_t count = 0;
    double pos = 0.0;
    const double limit = static_cast<double>(n);
    for (;;) {
        pos += std::floor(std::log(rng.uniform_open()) / log_q) + 1.0;
        if (pos > limit) return count;
        ++count;
    }
}

/// Mult(n, weights / sum(weights)) by sequential conditional binomials.
/// Zero-weight cells always receive zero; all-zero weights are an error.
inline std::vector<std::uint64_t> sample_multinomial(std::uint64_t n, std::span<const double> weights, RngStream& rng) {
    std::vector<std::uint64_t> counts(weights.size(), 0);
    for (double w : weights) detail::require(w >= 0.0 && std::isfinite(w), "sample_multinomial: weights must be finite and nonnegative");
    std::vector<double> suffix(weights.size() + 1, 0.0);
    for (std::size_t i = weights.size(); i-- > 0;) suffix[i] = suffix[i + 1] + weights[i];
    detail::require(suffix.empty() || suffix[0] > 0.0, "sample_multinomial: degenerate all-zero weights");
    if (weights.empty()) throw ParameterError("sample_multinomial: no cells");
    std::uint64_t remaining = n;
    for (std::size_t i = 0; i < weights.size() && remaining > 0; ++i) {
        if (weights[i] == 0.0) continue;
        if (suffix[i + 1] == 0.0) {
            counts[i] = remaining;
            remaining = 0;
            break;
        }
        const double p = std::min(1.0, weights[i] / suffix[i]);
        counts[i] = sample_binomial(remaining, p, rng);
        remaining -= counts[i];
    }
    return counts;
}

/// Chinese restaurant table count: sum_{i=1..n} Bernoulli(r / (r + i - 1)).
inline std::uint64_t sample_crt(std::uint64_t n, double r, RngStream& rng) {
    detail::require(r > 0.0 && std::isfinite(r), "sample_crt: concentration must be positive");
    if (n == 0) return 0;
    std::uint64_t tables = 1;
    for (std::uint64_t i = 2; i <= n; ++i) {
        if (rng.uniform() * (r + static_cast<double>(i - 1)) < r) ++tables;
    }
    return tables;
}

/// Logarithmic(p): P(k) = -p^k / (k ln(1 - p)), k >= 1 (Kemp's LK algorithm).
inline std::uint64_t sample_logarithmic(double p, RngStream& rng) {
    detail::require(p > 0.0 && p < 1.0, "sample_logarithmic: p must lie in (0, 1)");
    const double v = rng.uniform_open();
    if (v >= p) return 1;
    const double q = -std::expm1(std::log1p(-p) * rng.uniform_open());
    if (v <= q * q) {
        const double k = std::floor(1.0 + std::log(v) / std::log(q));
        return k < 1.0 ? 1 : static_cast<std::uint64_t>(k);
    }
    return v <= q ? 2 : 1;
}

/// SumLog(n, p): sum of n independent Logarithmic(p) draws.
inline std::uint64_t sample_sumlog(std::uint64_t n, double p, RngStream& rng) {
    detail::require(n >= 1, "sample_sumlog: n must be at least 1");
    detail::require(p > 0.0 && p < 1.0, "sample_sumlog: p must lie in (0, 1)");
    std::uint64_t total = 0;
    for (std::uint64_t i = 0; i < n; ++i) total += sample_logarithmic(p, rng);
    return total;
}

}  // namespace softplus::dist
