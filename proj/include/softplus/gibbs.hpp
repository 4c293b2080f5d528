#pragma once

// Upward-downward Gibbs sampler for sum-stack-softplus regression and its
// special cases. One iteration runs, in order: the downward theta sweep,
// layer-1 counts, the upward sweep (CRT counts, Polya-Gamma weights,
// coefficients, q recomputation, ARD precisions), pruning, then the
// gamma-process globals gamma0, c0 and r.
//
// Layer indices follow the model: theta^(t) for t = 1..T (theta^(T+1) is r_k),
// q^(t) and m^(t) for t = 1..T+1, beta^(t) and omega^(t) for t = 2..T+1.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "softplus/error.hpp"
#include "softplus/model.hpp"
#include "softplus/mvn.hpp"
#include "softplus/polya_gamma.hpp"
#include "softplus/rng.hpp"

namespace softplus::gibbs {

using Count = std::uint64_t;

struct ChainState {
    int n = 0;       // data points
    int k_max = 0;   // gamma-process truncation
    int depth = 0;   // T
    int width = 0;   // V + 1

    std::vector<std::vector<Eigen::VectorXd>> beta;   // [k][t - 2]
    std::vector<std::vector<Eigen::VectorXd>> alpha;  // [k][t - 2]
    std::vector<double> r;
    double gamma0 = 1.0;
    double c0 = 1.0;

    std::vector<double> theta_;  // [k][t - 1][i], t = 1..T
    std::vector<double> tau_;    // [k][t - 1][i], t = 1..T
    std::vector<double> q_;      // [k][t - 1][i], t = 1..T+1
    std::vector<Count> mcount_;  // [k][t - 1][i], t = 1..T+1
    std::vector<double> omega_;  // [k][t - 2][i], t = 2..T+1
    std::vector<Count> m;        // [i]
    std::vector<char> active;
    std::vector<Count> ltilde;
    int iter = 0;

    std::size_t at(int k, int layer, int i, int layers) const {
        return (static_cast<std::size_t>(k) * static_cast<std::size_t>(layers) + static_cast<std::size_t>(layer)) *
                   static_cast<std::size_t>(n) +
               static_cast<std::size_t>(i);
    }

    double& theta(int i, int k, int t) { return theta_[at(k, t - 1, i, depth)]; }
    double theta(int i, int k, int t) const { return theta_[at(k, t - 1, i, depth)]; }
    double& tau(int i, int k, int t) { return tau_[at(k, t - 1, i, depth)]; }
    double tau(int i, int k, int t) const { return tau_[at(k, t - 1, i, depth)]; }
    double& q(int i, int k, int t) { return q_[at(k, t - 1, i, depth + 1)]; }
    double q(int i, int k, int t) const { return q_[at(k, t - 1, i, depth + 1)]; }
    Count& mcount(int i, int k, int t) { return mcount_[at(k, t - 1, i, depth + 1)]; }
    Count mcount(int i, int k, int t) const { return mcount_[at(k, t - 1, i, depth + 1)]; }
    double& omega(int i, int k, int t) { return omega_[at(k, t - 2, i, depth)]; }
    double omega(int i, int k, int t) const { return omega_[at(k, t - 2, i, depth)]; }

    /// theta^(t) with the top layer t = T + 1 read as r_k.
    double shape_above(int i, int k, int t) const { return t == depth + 1 ? r[static_cast<std::size_t>(k)] : theta(i, k, t); }

    bool is_active(int k) const { return active[static_cast<std::size_t>(k)] != 0; }
    int n_active() const {
        int c = 0;
        for (char a : active) c += a ? 1 : 0;
        return c;
    }

    /// m^(t)_{.k}
    Count layer_count(int k, int t) const {
        Count s = 0;
        for (int i = 0; i < n; ++i) s += mcount(i, k, t);
        return s;
    }
};

namespace detail {

inline void recompute_q(ChainState& s, const Dataset& d, int k) {
    for (int t = 2; t <= s.depth + 1; ++t) {
        const Eigen::VectorXd eta = d.x * s.beta[static_cast<std::size_t>(k)][static_cast<std::size_t>(t - 2)];
        for (int i = 0; i < s.n; ++i) {
            const double prev = s.q(i, k, t - 1);
            s.q(i, k, t) = prev == 0.0 ? 0.0 : softplus_fn(eta(i) + std::log(prev));
        }
    }
}

/// Runs f(k) for k in [0, n); with workers > 1 the indices are spread over
/// threads and the first exception is rethrown on the caller.
inline void parallel_for(int n, int workers, const std::function<void(int)>& f) {
    if (workers <= 1 || n <= 1) {
        for (int k = 0; k < n; ++k) f(k);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        const int nthreads = std::min(workers, n);
        pool.reserve(static_cast<std::size_t>(nthreads));
        for (int w = 0; w < nthreads; ++w) {
            pool.emplace_back([&] {
                for (int k = next++; k < n; k = next++) {
                    try {
                        f(k);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// beta = 0, r_k = 1/K_max, every expert active, zero counts and latents,
/// gamma0 = c0 = 1 (configurable), alpha at its prior mean clipped to
/// [alpha_floor, 1e6], and q computed from the zero coefficients.
inline ChainState init_state(const Dataset& d, const HyperParams& hp) {
    hp.validate();
    if (d.size() == 0) throw DataError("init_state: dataset is empty");
    if (d.dim() == 0) throw DataError("init_state: dataset has no features");
    ChainState s;
    s.n = static_cast<int>(d.size());
    s.k_max = hp.k_max;
    s.depth = hp.depth;
    s.width = static_cast<int>(d.x.cols());
    const auto K = static_cast<std::size_t>(s.k_max);
    const auto T = static_cast<std::size_t>(s.depth);
    const auto N = static_cast<std::size_t>(s.n);
    const double alpha0 = std::clamp(hp.a_t / hp.b_t, hp.alpha_floor, 1e6);
    s.beta.assign(K, std::vector<Eigen::VectorXd>(T, Eigen::VectorXd::Zero(s.width)));
    s.alpha.assign(K, std::vector<Eigen::VectorXd>(T, Eigen::VectorXd::Constant(s.width, alpha0)));
    s.r.assign(K, 1.0 / static_cast<double>(s.k_max));
    s.gamma0 = hp.gamma0_init;
    s.c0 = hp.c0_init;
    s.theta_.assign(K * T * N, 0.0);
    s.tau_.assign(K * T * N, 0.0);
    s.q_.assign(K * (T + 1) * N, 0.0);
    s.mcount_.assign(K * (T + 1) * N, 0);
    s.omega_.assign(K * T * N, 0.0);
    s.m.assign(N, 0);
    s.active.assign(K, 1);
    s.ltilde.assign(K, 0);
    for (int k = 0; k < s.k_max; ++k) {
        for (int i = 0; i < s.n; ++i) s.q(i, k, 1) = 1.0;
        detail::recompute_q(s, d, k);
    }
    return s;
}

/// Downward sweep for one expert: for t = T..1,
/// tau^(t) ~ Gamma(theta^(t+1) + m^(t), 1 - e^{-q^(t+1)}), theta^(t) = tau / max(eps, q^(t)).
inline void sample_theta_expert(ChainState& s, const HyperParams& hp, int k, dist::RngStream& rng) {
    for (int t = s.depth; t >= 1; --t) {
        for (int i = 0; i < s.n; ++i) {
            const double shape = s.shape_above(i, k, t + 1) + static_cast<double>(s.mcount(i, k, t));
            const double scale = -std::expm1(-s.q(i, k, t + 1));
            const double tau = (shape > 0.0 && scale > 0.0) ? dist::sample_gamma(shape, scale, rng) : 0.0;
            s.tau(i, k, t) = tau;
            s.theta(i, k, t) = tau / std::max(hp.eps_q, s.q(i, k, t));
        }
    }
}

inline void sample_theta_sweep(ChainState& s, const HyperParams& hp, dist::RngStream& rng) {
    for (int k = 0; k < s.k_max; ++k) {
        if (s.is_active(k)) sample_theta_expert(s, hp, k, rng);
    }
}

/// m_i ~ y_i Pois_+(theta_i.), then m^(1)_{i.} ~ Mult(m_i, theta^(1)_{i.} / theta_i.).
/// The rate and all-zero weights are floored at eps_q.
inline void sample_counts(ChainState& s, const Dataset& d, const HyperParams& hp, dist::RngStream& rng,
                          dist::TruncatedPoissonStats* stats = nullptr) {
    std::vector<double> weights;
    std::vector<int> cells;
    for (int i = 0; i < s.n; ++i) {
        for (int k = 0; k < s.k_max; ++k) s.mcount(i, k, 1) = 0;
        if (d.y[static_cast<std::size_t>(i)] == 0) {
            s.m[static_cast<std::size_t>(i)] = 0;
            continue;
        }
        weights.clear();
        cells.clear();
        double total = 0.0;
        for (int k = 0; k < s.k_max; ++k) {
            if (!s.is_active(k)) continue;
            cells.push_back(k);
            weights.push_back(s.theta(i, k, 1));
            total += s.theta(i, k, 1);
        }
        if (cells.empty()) throw NumericalError("sample_counts: positive example but no active experts");
        const Count mi = dist::sample_truncated_poisson(std::max(total, hp.eps_q), rng, stats);
        s.m[static_cast<std::size_t>(i)] = mi;
        if (!(total > 0.0)) std::fill(weights.begin(), weights.end(), hp.eps_q);
        const auto split = dist::sample_multinomial(mi, weights, rng);
        for (std::size_t c = 0; c < cells.size(); ++c) s.mcount(i, cells[c], 1) = split[c];
    }
}

/// Upward sweep for one expert, t = 2..T+1: CRT counts, Polya-Gamma weights,
/// the Gaussian coefficient draw, q^(t) recomputation and the ARD precisions.
/// Rows with q^(t-1) = 0 contribute omega = 0 and linear term m^(t-1).
inline void upward_expert(ChainState& s, const Dataset& d, const HyperParams& hp, int k, dist::RngStream& rng,
                          dist::PolyaGammaStats* pg_stats = nullptr) {
    const auto ks = static_cast<std::size_t>(k);
    Eigen::VectorXd w(s.n);
    Eigen::VectorXd coef(s.n);
    for (int t = 2; t <= s.depth + 1; ++t) {
        const auto j = static_cast<std::size_t>(t - 2);
        Eigen::VectorXd& beta = s.beta[ks][j];
        const Eigen::VectorXd eta = d.x * beta;
        for (int i = 0; i < s.n; ++i) {
            const Count m_prev = s.mcount(i, k, t - 1);
            const double shape_above = s.shape_above(i, k, t);
            Count m_next;
            if (shape_above > 0.0) {
                m_next = dist::sample_crt(m_prev, shape_above, rng);
            } else {
                m_next = m_prev > 0 ? 1 : 0;
            }
            s.mcount(i, k, t) = m_next;

            const double q_prev = s.q(i, k, t - 1);
            const double pg_shape = static_cast<double>(m_prev) + shape_above;
            double om = 0.0;
            if (q_prev == 0.0) {
                coef(i) = static_cast<double>(m_prev);
            } else {
                const double log_q = std::log(q_prev);
                if (pg_shape > 0.0) {
                    om = dist::sample_polya_gamma({pg_shape, eta(i) + log_q, hp.pg_truncation}, rng, pg_stats);
                }
                coef(i) = -om * log_q + 0.5 * (static_cast<double>(m_prev) - shape_above);
            }
            s.omega(i, k, t) = om;
            w(i) = om;
        }
        Eigen::MatrixXd precision = d.x.transpose() * w.asDiagonal() * d.x;
        precision.diagonal() += s.alpha[ks][j];
        const Eigen::VectorXd linear = d.x.transpose() * coef;
        beta = dist::sample_mvn_precision(precision, linear, rng);

        const Eigen::VectorXd eta_new = d.x * beta;
        for (int i = 0; i < s.n; ++i) {
            const double q_prev = s.q(i, k, t - 1);
            s.q(i, k, t) = q_prev == 0.0 ? 0.0 : softplus_fn(eta_new(i) + std::log(q_prev));
        }
        Eigen::VectorXd& alpha = s.alpha[ks][j];
        for (Eigen::Index v = 0; v < alpha.size(); ++v) {
            const double rate = hp.b_t + 0.5 * beta(v) * beta(v);
            alpha(v) = std::max(hp.alpha_floor, dist::sample_gamma(hp.a_t + 0.5, 1.0 / rate, rng));
        }
    }
}

inline void upward_sweep(ChainState& s, const Dataset& d, const HyperParams& hp, dist::RngStream& rng,
                         dist::PolyaGammaStats* pg_stats = nullptr) {
    for (int k = 0; k < s.k_max; ++k) {
        if (s.is_active(k)) upward_expert(s, d, hp, k, rng, pg_stats);
    }
}

/// At scheduled iterations, permanently deactivate experts with no layer-1
/// counts and clear their per-sample latents. Returns how many were pruned.
inline int prune(ChainState& s, const HyperParams& hp) {
    if (!hp.prune_iters.contains(s.iter)) return 0;
    int pruned = 0;
    for (int k = 0; k < s.k_max; ++k) {
        if (!s.is_active(k) || s.layer_count(k, 1) != 0) continue;
        s.active[static_cast<std::size_t>(k)] = 0;
        ++pruned;
        for (int i = 0; i < s.n; ++i) {
            for (int t = 1; t <= s.depth; ++t) {
                s.theta(i, k, t) = 0.0;
                s.tau(i, k, t) = 0.0;
            }
            for (int t = 1; t <= s.depth + 1; ++t) {
                s.mcount(i, k, t) = 0;
                s.q(i, k, t) = t == 1 ? 1.0 : 0.0;
            }
            for (int t = 2; t <= s.depth + 1; ++t) s.omega(i, k, t) = 0.0;
        }
    }
    return pruned;
}

/// l~_k ~ CRT(l_.k, gamma0/K), gamma0 | -, c0 | -, then r_k for all K_max
/// experts (inactive ones see S_k = 0). K is always K_max.
inline void sample_globals(ChainState& s, const HyperParams& hp, dist::RngStream& rng, bool fix_r = false) {
    const double K = static_cast<double>(s.k_max);
    std::vector<double> S(static_cast<std::size_t>(s.k_max), 0.0);
    std::vector<Count> l(static_cast<std::size_t>(s.k_max), 0);
    double ltilde_total = 0.0;
    double log_term = 0.0;
    for (int k = 0; k < s.k_max; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        if (s.is_active(k)) {
            for (int i = 0; i < s.n; ++i) {
                S[ks] += s.q(i, k, s.depth + 1);
                l[ks] += s.mcount(i, k, s.depth + 1);
            }
        }
        s.ltilde[ks] = dist::sample_crt(l[ks], s.gamma0 / K, rng);
        ltilde_total += static_cast<double>(s.ltilde[ks]);
        // ln(1 - p~_k) = -ln(1 + S_k / c0)
        log_term += std::log1p(S[ks] / s.c0);
    }
    s.gamma0 = dist::sample_gamma(hp.a0 + ltilde_total, 1.0 / (hp.b0 + log_term / K), rng);
    double r_sum = 0.0;
    for (double rk : s.r) r_sum += rk;
    s.c0 = dist::sample_gamma(hp.e0 + s.gamma0, 1.0 / (hp.f0 + r_sum), rng);
    if (fix_r) return;
    for (int k = 0; k < s.k_max; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        s.r[ks] = dist::sample_gamma(s.gamma0 / K + static_cast<double>(l[ks]), 1.0 / (s.c0 + S[ks]), rng);
    }
}

/// Current rates lambda_i = sum_k r_k q_k^(T+1) over active experts.
inline std::vector<double> current_rates(const ChainState& s) {
    std::vector<double> lambda(static_cast<std::size_t>(s.n), 0.0);
    for (int k = 0; k < s.k_max; ++k) {
        if (!s.is_active(k)) continue;
        const double rk = s.r[static_cast<std::size_t>(k)];
        for (int i = 0; i < s.n; ++i) lambda[static_cast<std::size_t>(i)] += rk * s.q(i, k, s.depth + 1);
    }
    return lambda;
}

/// Count-propagation checks: m^(1) sums to m_i, per-point counts never grow
/// with t, m^(t)_{.k} is nonincreasing in t and m^(t)_{..} >= #positives.
inline void check_count_invariants(const ChainState& s, const Dataset& d) {
    const auto positives = static_cast<Count>(d.positives());
    for (int i = 0; i < s.n; ++i) {
        Count sum = 0;
        for (int k = 0; k < s.k_max; ++k) sum += s.mcount(i, k, 1);
        if (sum != s.m[static_cast<std::size_t>(i)]) throw NumericalError("invariant: layer-1 counts do not sum to m_i");
        if ((d.y[static_cast<std::size_t>(i)] == 1) != (s.m[static_cast<std::size_t>(i)] >= 1)) {
            throw NumericalError("invariant: m_i >= 1 must hold exactly for positive labels");
        }
    }
    std::vector<Count> totals(static_cast<std::size_t>(s.depth + 1), 0);
    for (int k = 0; k < s.k_max; ++k) {
        Count prev = 0;
        for (int t = 1; t <= s.depth + 1; ++t) {
            for (int i = 0; i < s.n; ++i) {
                if (t > 1 && s.mcount(i, k, t) > s.mcount(i, k, t - 1)) {
                    throw NumericalError("invariant: CRT output exceeds its input");
                }
            }
            const Count c = s.layer_count(k, t);
            if (t > 1 && c > prev) {
                throw NumericalError("invariant: m^(t)_.k increased with t for expert " + std::to_string(k));
            }
            prev = c;
            totals[static_cast<std::size_t>(t - 1)] += c;
            if (!s.is_active(k) && c != 0) throw NumericalError("invariant: inactive expert holds counts");
        }
    }
    for (int t = 1; t <= s.depth + 1; ++t) {
        if (totals[static_cast<std::size_t>(t - 1)] < positives) {
            throw NumericalError("invariant: m^(" + std::to_string(t) + ")_.. fell below the number of positives");
        }
    }
}

/// Largest |q stored - q recomputed| over the chain.
inline double q_consistency_error(const ChainState& s, const Dataset& d) {
    double worst = 0.0;
    for (int k = 0; k < s.k_max; ++k) {
        if (!s.is_active(k)) continue;
        for (int i = 0; i < s.n; ++i) {
            const auto q = q_recursion(d.x.row(i).transpose(), s.beta[static_cast<std::size_t>(k)]);
            for (int t = 1; t <= s.depth + 1; ++t) {
                worst = std::max(worst, std::fabs(q[static_cast<std::size_t>(t - 1)] - s.q(i, k, t)));
            }
        }
    }
    return worst;
}

/// Active experts whose weighted contribution over the training points is nonzero.
inline FittedModel snapshot(const ChainState& s, const Dataset& d, const HyperParams& hp, Variant variant, double log_lik) {
    FittedModel m;
    m.variant = variant;
    m.depth = s.depth;
    m.orientation = d.orientation;
    m.standardization = d.standardization;
    m.log_lik = log_lik;
    m.hyper = hp;
    m.meta = {hp.seed, hp.n_iter, hp.k_max, {}};
    for (int k = 0; k < s.k_max; ++k) {
        const double rk = s.r[static_cast<std::size_t>(k)];
        if (!s.is_active(k) || !(rk > 0.0)) continue;
        double contribution = 0.0;
        for (int i = 0; i < s.n; ++i) contribution += rk * s.q(i, k, s.depth + 1);
        if (contribution == 0.0) continue;
        m.experts.push_back({rk, s.beta[static_cast<std::size_t>(k)]});
    }
    return m;
}

struct TraceRow {
    int iter = 0;
    double log_lik = 0.0;
    int n_active = 0;
    std::vector<Count> m_total;  // m^(t)_{..} for t = 1..T+1
};

struct Trace {
    std::vector<TraceRow> rows;

    void write(std::ostream& os) const {
        os << "iter,log_lik,n_active";
        const std::size_t layers = rows.empty() ? 0 : rows.front().m_total.size();
        for (std::size_t t = 1; t <= layers; ++t) os << ",m_total_" << t;
        os << '\n';
        const auto old_precision = os.precision(17);
        for (const auto& r : rows) {
            os << r.iter << ',' << r.log_lik << ',' << r.n_active;
            for (Count c : r.m_total) os << ',' << c;
            os << '\n';
        }
        os.precision(old_precision);
    }

    bool operator==(const Trace& o) const {
        if (rows.size() != o.rows.size()) return false;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& a = rows[i];
            const auto& b = o.rows[i];
            if (a.iter != b.iter || a.log_lik != b.log_lik || a.n_active != b.n_active || a.m_total != b.m_total) return false;
        }
        return true;
    }
};

/// A chain that produced a non-finite log-likelihood; carries the trace up to
/// and including the failing iteration.
class ChainFailure : public NumericalError {
  public:
    ChainFailure(const std::string& msg, Trace trace) : NumericalError(msg), trace_(std::move(trace)) {}
    const Trace& trace() const noexcept { return trace_; }

  private:
    Trace trace_;
};

struct RunOptions {
    int workers = 1;
    bool check_invariants = true;
    bool check_q_consistency = false;  // O(N K T V) per iteration; for tests
    // Called after every iteration with the state; may be empty.
    std::function<void(const ChainState&)> on_iteration;
};

struct RunResult {
    FittedModel model;
    Trace trace;
    int best_iter = 0;
    std::uint64_t pg_residual_skips = 0;
    double trpois_acceptance = 0.0;
    double max_q_inconsistency = 0.0;
};

/// Throws ParameterError when (K_max, T) contradict the variant.
inline void check_variant(const HyperParams& hp, Variant v) {
    switch (v) {
        case Variant::kSum:
            softplus::detail::require(hp.depth == 1, "variant sum requires T = 1");
            break;
        case Variant::kStack:
            softplus::detail::require(hp.k_max == 1, "variant stack requires K_max = 1");
            break;
        case Variant::kSoftplus:
        case Variant::kLogistic:
            softplus::detail::require(hp.k_max == 1 && hp.depth == 1, "variants softplus and logistic require K_max = T = 1");
            break;
        case Variant::kSumStack:
            break;
    }
}

/// Force the dimensions a variant pins (sum: T = 1, stack: K_max = 1,
/// softplus/logistic: both).
inline HyperParams apply_variant(HyperParams hp, Variant v) {
    if (v == Variant::kSum || v == Variant::kSoftplus || v == Variant::kLogistic) hp.depth = 1;
    if (v == Variant::kStack || v == Variant::kSoftplus || v == Variant::kLogistic) hp.k_max = 1;
    return hp;
}

/// Run the chain for hp.n_iter iterations and return the maximum-likelihood
/// snapshot among post-burn-in iterations together with the trace.
///
/// With workers == 1 every draw comes from one stream and runs are
/// bit-reproducible. With workers > 1 each expert owns stream k + 1 and the
/// shared steps use stream 0, so results depend on (seed, K_max) but not on
/// the worker count.
inline RunResult run(const Dataset& d, const HyperParams& hp, Variant variant, const RunOptions& opts = {}) {
    d.validate();
    hp.validate();
    check_variant(hp, variant);
    const bool fix_r = variant == Variant::kLogistic;

    ChainState s = init_state(d, hp);
    if (fix_r) std::fill(s.r.begin(), s.r.end(), 1.0);

    dist::RngStream main_rng(hp.seed, 0);
    std::vector<dist::RngStream> expert_rngs;
    const bool parallel = opts.workers > 1;
    if (parallel) {
        for (int k = 0; k < s.k_max; ++k) expert_rngs.emplace_back(hp.seed, static_cast<std::uint64_t>(k) + 1);
    }
    std::vector<dist::PolyaGammaStats> pg_stats(static_cast<std::size_t>(s.k_max));
    dist::TruncatedPoissonStats tp_stats;

    RunResult result;
    result.trace.rows.reserve(static_cast<std::size_t>(hp.n_iter));
    const int burn = std::min(hp.n_iter - 1, static_cast<int>(std::floor(hp.burn_frac * hp.n_iter)));
    double best = -std::numeric_limits<double>::infinity();
    bool have_best = false;

    for (int it = 1; it <= hp.n_iter; ++it) {
        s.iter = it;
        if (parallel) {
            detail::parallel_for(s.k_max, opts.workers, [&](int k) {
                if (s.is_active(k)) sample_theta_expert(s, hp, k, expert_rngs[static_cast<std::size_t>(k)]);
            });
        } else {
            sample_theta_sweep(s, hp, main_rng);
        }
        sample_counts(s, d, hp, main_rng, &tp_stats);
        if (parallel) {
            detail::parallel_for(s.k_max, opts.workers, [&](int k) {
                if (s.is_active(k)) {
                    upward_expert(s, d, hp, k, expert_rngs[static_cast<std::size_t>(k)], &pg_stats[static_cast<std::size_t>(k)]);
                }
            });
        } else {
            for (int k = 0; k < s.k_max; ++k) {
                if (s.is_active(k)) upward_expert(s, d, hp, k, main_rng, &pg_stats[static_cast<std::size_t>(k)]);
            }
        }
        if (opts.check_invariants) check_count_invariants(s, d);
        if (opts.check_q_consistency) result.max_q_inconsistency = std::max(result.max_q_inconsistency, q_consistency_error(s, d));
        prune(s, hp);
        sample_globals(s, hp, main_rng, fix_r);

        const auto lambda = current_rates(s);
        const double ll = log_likelihood_from_rates(d.y, lambda, hp.eps_q);
        TraceRow row{it, ll, s.n_active(), std::vector<Count>(static_cast<std::size_t>(s.depth + 1), 0)};
        for (int k = 0; k < s.k_max; ++k) {
            for (int t = 1; t <= s.depth + 1; ++t) row.m_total[static_cast<std::size_t>(t - 1)] += s.layer_count(k, t);
        }
        result.trace.rows.push_back(std::move(row));
        if (!std::isfinite(ll)) {
            throw ChainFailure("gibbs: non-finite log-likelihood at iteration " + std::to_string(it), std::move(result.trace));
        }

        if (it > burn && (!have_best || ll > best)) {
            best = ll;
            have_best = true;
            result.best_iter = it;
            result.model = snapshot(s, d, hp, variant, ll);
        }
        if (opts.on_iteration) opts.on_iteration(s);
    }
    for (const auto& st : pg_stats) result.pg_residual_skips += st.residual_skips;
    result.trpois_acceptance = tp_stats.acceptance_rate();
    return result;
}

}  // namespace softplus::gibbs
