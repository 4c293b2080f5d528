#pragma once

// Polya-Gamma PG(a, c): closed-form moments and a truncated gamma-sum sampler
// whose residual term is moment matched, so draws are unbiased in both mean and
// variance at any truncation level.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "softplus/error.hpp"
#include "softplus/rng.hpp"

namespace softplus::dist {

struct PGParams {
    double a = 1.0;             // shape
    double c = 0.0;             // tilt
    int truncation = 6;         // number of gamma terms, including the residual
};

struct PolyaGammaStats {
    std::uint64_t draws = 0;
    std::uint64_t residual_skips = 0;
};

inline constexpr int kDefaultPgTruncation = 6;

/// E[PG(a, c)] = a / (2|c|) * tanh(|c| / 2).
inline double pg_mean(double a, double c) {
    detail::require(a > 0.0, "pg_mean: shape must be positive");
    const double x = std::fabs(c);
    if (x < 1e-4) {
        const double y2 = 0.25 * x * x;
        return 0.25 * a * (1.0 - y2 / 3.0 + 2.0 * y2 * y2 / 15.0);
    }
    return a / (2.0 * x) * std::tanh(0.5 * x);
}

/// var[PG(a, c)] = a / (2|c|^3) * (sinh|c| - |c|) / (cosh|c| + 1).
///
/// Below |c| = 1 the equivalent series a/4 sech^2(|c|/2) (1/6 + sum |c|^2n/(2n+3)!)
/// is summed to convergence; the sinh form loses digits to cancellation there.
/// Above 1 the exponentially scaled closed form avoids overflow.
inline double pg_variance(double a, double c) {
    detail::require(a > 0.0, "pg_variance: shape must be positive");
    const double x = std::fabs(c);
    if (x < 1.0) {
        const double x2 = x * x;
        double term = 1.0 / 6.0;
        double sum = term;
        for (int n = 1; n < 30; ++n) {
            term *= x2 / ((2.0 * n + 2.0) * (2.0 * n + 3.0));
            sum += term;
            if (term < 1e-18 * sum) break;
        }
        const double sech = 1.0 / std::cosh(0.5 * x);
        return 0.25 * a * sech * sech * sum;
    }
    const double e1 = std::exp(-x);
    const double num = -std::expm1(-2.0 * x) - 2.0 * x * e1;
    const double den = (1.0 + e1) * (1.0 + e1);
    return a / (2.0 * x * x * x) * num / den;
}

/// Draw X_hat + X_residual. X_hat sums truncation - 1 terms g_k / d_k with
/// g_k ~ Gamma(a, 1) and d_k = 2 pi^2 (k - 1/2)^2 + c^2 / 2; the residual is a
/// gamma matched to the remaining mean and variance. When either remainder is
/// not positive (possible at extreme tilts), or the matched shape underflows,
/// the residual is skipped.
inline double sample_polya_gamma(const PGParams& p, RngStream& rng, PolyaGammaStats* stats = nullptr) {
    detail::require(p.a > 0.0 && std::isfinite(p.a), "sample_polya_gamma: shape must be positive");
    detail::require(std::isfinite(p.c), "sample_polya_gamma: tilt must be finite");
    detail::require(p.truncation >= 1, "sample_polya_gamma: truncation must be at least 1");
    constexpr double two_pi_sq = 2.0 * std::numbers::pi * std::numbers::pi;
    const double half_c2 = 0.5 * p.c * p.c;

    double x_hat = 0.0;
    double inv_d_sum = 0.0;
    double inv_d2_sum = 0.0;
    for (int k = 1; k < p.truncation; ++k) {
        const double h = k - 0.5;
        const double d = two_pi_sq * h * h + half_c2;
        x_hat += sample_gamma(p.a, 1.0, rng) / d;
        inv_d_sum += 1.0 / d;
        inv_d2_sum += 1.0 / (d * d);
    }
    const double mu = pg_mean(p.a, p.c) - p.a * inv_d_sum;
    const double sigma2 = pg_variance(p.a, p.c) - p.a * inv_d2_sum;
    if (stats) ++stats->draws;
    const double shape = mu * mu / sigma2;
    const double scale = sigma2 / mu;
    // tiny a can underflow the matched shape even when both remainders are positive
    if (!(mu > 0.0) || !(sigma2 > 0.0) || !(shape > 0.0) || !std::isfinite(scale)) {
        if (stats) ++stats->residual_skips;
        return x_hat;
    }
    return x_hat + sample_gamma(shape, scale, rng);
}

}  // namespace softplus::dist
