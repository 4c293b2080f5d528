#pragma once

// Statistical self-tests for the samplers, shared by `softplus diag` and the
// acceptance suite. Each suite compares empirical draws against closed-form
// moments or an enumerated PMF and reports pass/fail per line.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "softplus/polya_gamma.hpp"
#include "softplus/rng.hpp"

namespace softplus::diag {

struct Report {
    std::string name;
    std::vector<std::string> lines;
    bool pass = true;

    void add(bool ok, const std::string& line) {
        pass = pass && ok;
        lines.push_back((ok ? "ok   " : "FAIL ") + line);
    }
    std::string text() const {
        std::string out = "[" + name + "] " + (pass ? "PASS" : "FAIL") + "\n";
        for (const auto& l : lines) out += "  " + l + "\n";
        return out;
    }
};

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

template <class Draw>
Moments empirical_moments(std::size_t n, Draw&& draw) {
    // Welford
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        const double x = draw();
        const double delta = x - mean;
        mean += delta / static_cast<double>(i);
        m2 += delta * (x - mean);
    }
    return {mean, n > 1 ? m2 / static_cast<double>(n - 1) : 0.0};
}

inline std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

/// Upper tail of the chi-square distribution.
inline double chi_square_pvalue(double statistic, double dof) { return boost::math::gamma_q(0.5 * dof, 0.5 * statistic); }

/// Polya-Gamma moments over the (a, c) grid: empirical mean within 1% and
/// variance within 3% of the closed forms, var/mean <= 1/6 with equality only
/// at c = 0, var >= a/24 sech^2(c/2), and |c| * mean -> a/2 at |c| = 100.
inline Report pg_suite(std::uint64_t seed = 2024, std::size_t draws = 1'000'000, int truncation = dist::kDefaultPgTruncation) {
    Report rep;
    rep.name = "pg";
    dist::RngStream rng(seed, 11);
    const double as[] = {0.5, 1.0, 3.0, 10.0};
    const double cs[] = {0.0, 0.1, 1.0, 4.0, 20.0};
    for (double a : as) {
        for (double c : cs) {
            const double mu = dist::pg_mean(a, c);
            const double var = dist::pg_variance(a, c);
            const auto emp = empirical_moments(draws, [&] { return dist::sample_polya_gamma({a, c, truncation}, rng); });
            const double mean_err = std::fabs(emp.mean - mu) / mu;
            const double var_err = std::fabs(emp.variance - var) / var;
            const double ratio = var / mu;
            const bool ratio_ok = c == 0.0 ? std::fabs(ratio - 1.0 / 6.0) < 1e-12 : ratio < 1.0 / 6.0;
            const double sech = 1.0 / std::cosh(0.5 * c);
            const bool lower_ok = var >= a / 24.0 * sech * sech * (1.0 - 1e-12);
            rep.add(mean_err < 0.01 && var_err < 0.03 && ratio_ok && lower_ok,
                    "a=" + fmt(a) + " c=" + fmt(c) + " mean " + fmt(emp.mean) + " vs " + fmt(mu) + " (rel " + fmt(mean_err, 3) +
                        ") var " + fmt(emp.variance) + " vs " + fmt(var) + " (rel " + fmt(var_err, 3) + ") var/mean " +
                        fmt(ratio) + (lower_ok ? "" : " [below sech^2 bound]"));
        }
    }
    for (double a : {1.0, 3.0}) {
        const double c = 100.0;
        const auto emp = empirical_moments(draws / 10, [&] { return dist::sample_polya_gamma({a, c, truncation}, rng); });
        const double scaled = c * emp.mean;
        rep.add(std::fabs(scaled - a / 2.0) / (a / 2.0) < 0.01,
                "a=" + fmt(a) + " |c|=100: |c| * mean " + fmt(scaled) + " vs a/2 = " + fmt(a / 2.0));
    }
    return rep;
}

/// CRT(n, r) empirical means against sum_{i=1..n} r / (r + i - 1), within 1%,
/// with the support invariant 1 <= l <= n for n >= 1.
inline Report crt_suite(std::uint64_t seed = 2024, std::size_t draws = 100'000) {
    Report rep;
    rep.name = "crt";
    dist::RngStream rng(seed, 12);
    const std::pair<std::uint64_t, double> cases[] = {{1, 0.3}, {5, 0.5}, {20, 2.0}, {50, 0.05}, {200, 10.0}};
    for (const auto& [n, r] : cases) {
        double expected = 0.0;
        for (std::uint64_t i = 1; i <= n; ++i) expected += r / (r + static_cast<double>(i) - 1.0);
        bool support_ok = true;
        const auto emp = empirical_moments(draws, [&] {
            const auto l = dist::sample_crt(n, r, rng);
            support_ok = support_ok && l >= 1 && l <= n;
            return static_cast<double>(l);
        });
        const double err = std::fabs(emp.mean - expected) / expected;
        rep.add(err < 0.01 && support_ok,
                "n=" + std::to_string(n) + " r=" + fmt(r) + " mean " + fmt(emp.mean) + " vs " + fmt(expected) + " (rel " + fmt(err, 3) + ")");
    }
    rep.add(dist::sample_crt(0, 5.0, rng) == 0, "n=0 gives 0");
    return rep;
}

/// Zero-truncated Poisson: means against lambda / (1 - e^{-lambda}) within 1%,
/// and the rejection branch's acceptance rate at lambda = 1 against 1 - e^{-1}.
inline Report trpois_suite(std::uint64_t seed = 2024, std::size_t draws = 200'000) {
    Report rep;
    rep.name = "trpois";
    dist::RngStream rng(seed, 13);
    for (double lambda : {1e-6, 0.3, 1.0, 5.0, 20.0}) {
        const double expected = lambda / -std::expm1(-lambda);
        const auto emp = empirical_moments(draws, [&] { return static_cast<double>(dist::sample_truncated_poisson(lambda, rng)); });
        const double err = std::fabs(emp.mean - expected) / expected;
        rep.add(err < 0.01, "lambda=" + fmt(lambda) + " mean " + fmt(emp.mean, 8) + " vs " + fmt(expected, 8) + " (rel " + fmt(err, 3) + ")");
    }
    dist::TruncatedPoissonStats stats;
    for (std::size_t i = 0; i < draws; ++i) dist::sample_truncated_poisson(1.0, rng, &stats);
    const double target = -std::expm1(-1.0);
    rep.add(std::fabs(stats.acceptance_rate() - target) < 0.005,
            "acceptance at lambda=1 " + fmt(stats.acceptance_rate(), 4) + " vs " + fmt(target, 4));
    return rep;
}

/// Joint PMF of (m, l) with m ~ NB(r, p), l | m ~ CRT(m, r):
/// P(m, l) = |s(m, l)| r^l p^m (1 - p)^r / m!, for m <= m_max.
inline std::vector<std::vector<double>> nb_crt_joint_pmf(double r, double p, int m_max) {
    // log unsigned Stirling numbers of the first kind, |s(m, l)|
    std::vector<std::vector<double>> log_s(static_cast<std::size_t>(m_max + 1),
                                           std::vector<double>(static_cast<std::size_t>(m_max + 1), -INFINITY));
    log_s[0][0] = 0.0;
    auto log_add = [](double a, double b) {
        if (a == -INFINITY) return b;
        if (b == -INFINITY) return a;
        const double hi = std::max(a, b);
        return hi + std::log1p(std::exp(std::min(a, b) - hi));
    };
    for (int m = 1; m <= m_max; ++m) {
        for (int l = 1; l <= m; ++l) {
            // |s(m, l)| = |s(m-1, l-1)| + (m-1) |s(m-1, l)|
            const double a = log_s[m - 1][l - 1];
            const double b = m > 1 ? std::log(m - 1.0) + log_s[m - 1][l] : -INFINITY;
            log_s[m][l] = log_add(a, b);
        }
    }
    std::vector<std::vector<double>> pmf(log_s.size(), std::vector<double>(log_s.size(), 0.0));
    for (int m = 0; m <= m_max; ++m) {
        for (int l = 0; l <= m; ++l) {
            if (log_s[m][l] == -INFINITY) continue;
            pmf[m][l] = std::exp(log_s[m][l] + l * std::log(r) + m * std::log(p) + r * std::log1p(-p) - std::lgamma(m + 1.0));
        }
    }
    return pmf;
}

struct ChiSquare {
    double statistic = 0.0;
    int dof = 0;
    double pvalue = 0.0;
};

/// Goodness of fit of observed (m, l) counts against the enumerated PMF. Cells
/// with expected count below 5, and everything beyond m_max, share one pooled cell.
inline ChiSquare joint_gof(const std::vector<std::vector<std::uint64_t>>& observed, std::uint64_t overflow,
                           const std::vector<std::vector<double>>& pmf, std::uint64_t n) {
    ChiSquare out;
    double pooled_obs = static_cast<double>(overflow);
    double kept_mass = 0.0;
    int cells = 0;
    for (std::size_t m = 0; m < pmf.size(); ++m) {
        for (std::size_t l = 0; l < pmf[m].size(); ++l) {
            const double e = pmf[m][l] * static_cast<double>(n);
            const double o = static_cast<double>(observed[m][l]);
            if (e < 5.0) {
                pooled_obs += o;
                continue;
            }
            kept_mass += pmf[m][l];
            out.statistic += (o - e) * (o - e) / e;
            ++cells;
        }
    }
    const double pooled_exp = (1.0 - kept_mass) * static_cast<double>(n);
    if (pooled_exp > 0.0) {
        out.statistic += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
        ++cells;
    }
    out.dof = cells - 1;
    out.pvalue = chi_square_pvalue(out.statistic, out.dof);
    return out;
}

/// CRT/SumLog duality at (r, q): p = 1 - e^{-q}. Route A draws m ~ NB(r, p)
/// then l ~ CRT(m, r); route B draws l ~ Pois(r q) then m ~ SumLog(l, p).
/// Each route's (m, l) histogram is tested against the enumerated joint PMF.
inline Report duality_suite(std::uint64_t seed = 2024, std::size_t draws = 200'000, double r = 2.0, double q = 0.7, int m_max = 30) {
    Report rep;
    rep.name = "duality";
    dist::RngStream rng(seed, 14);
    const double p = -std::expm1(-q);
    const auto pmf = nb_crt_joint_pmf(r, p, m_max);
    const auto size = static_cast<std::size_t>(m_max + 1);
    auto tally = [&](auto&& draw_pair) {
        std::vector<std::vector<std::uint64_t>> obs(size, std::vector<std::uint64_t>(size, 0));
        std::uint64_t overflow = 0;
        for (std::size_t i = 0; i < draws; ++i) {
            const auto [m, l] = draw_pair();
            if (m <= static_cast<std::uint64_t>(m_max)) {
                ++obs[m][l];
            } else {
                ++overflow;
            }
        }
        return joint_gof(obs, overflow, pmf, draws);
    };
    const auto a = tally([&] {
        const double theta = dist::sample_gamma(r, p / (1.0 - p), rng);
        const auto m = dist::sample_poisson(theta, rng);
        return std::pair{m, dist::sample_crt(m, r, rng)};
    });
    const auto b = tally([&] {
        const auto l = dist::sample_poisson(r * q, rng);
        const std::uint64_t m = l == 0 ? 0 : dist::sample_sumlog(l, p, rng);
        return std::pair{m, l};
    });
    rep.add(a.pvalue > 0.01, "NB then CRT vs enumerated joint: chi2 " + fmt(a.statistic) + " dof " + std::to_string(a.dof) + " p " + fmt(a.pvalue, 4));
    rep.add(b.pvalue > 0.01, "Poisson then SumLog vs enumerated joint: chi2 " + fmt(b.statistic) + " dof " + std::to_string(b.dof) + " p " + fmt(b.pvalue, 4));
    return rep;
}

}  // namespace softplus::diag
