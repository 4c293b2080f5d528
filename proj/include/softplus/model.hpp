#pragma once

// Data, hyperparameter and fitted-model types plus the deterministic
// predictive math of the softplus regression family: the stack-softplus
// q-recursion, the Bernoulli-Poisson rate, class probabilities, the
// two-orientation fusion rule and the training log-likelihood.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "softplus/error.hpp"
#include "softplus/polya_gamma.hpp"

namespace softplus {

/// Per-feature z-score parameters for columns 1..V (the bias column is never scaled).
struct Standardization {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool operator==(const Standardization&) const = default;
};

/// Which class was coded as 1 during training.
enum class Orientation { kAsIs, kFlipped };

inline Orientation opposite(Orientation o) {
    return o == Orientation::kAsIs ? Orientation::kFlipped : Orientation::kAsIs;
}

inline std::string_view to_string(Orientation o) { return o == Orientation::kAsIs ? "asis" : "flipped"; }

/// Covariates with a leading bias column of ones, and binary labels.
struct Dataset {
    Eigen::MatrixXd x;   // N x (V + 1), column 0 all ones
    std::vector<int> y;  // entries in {0, 1}
    std::optional<Standardization> standardization;
    Orientation orientation = Orientation::kAsIs;

    Eigen::Index size() const { return x.rows(); }
    Eigen::Index dim() const { return x.cols() - 1; }
    std::size_t positives() const {
        std::size_t n = 0;
        for (int v : y) n += v == 1 ? 1 : 0;
        return n;
    }

    void validate() const {
        if (static_cast<std::size_t>(x.rows()) != y.size()) throw DataError("dataset: row count does not match label count");
        if (x.cols() < 1) throw DataError("dataset: missing bias column");
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (x(i, 0) != 1.0) throw DataError("dataset: column 0 must be all ones");
        }
        for (int v : y) {
            if (v != 0 && v != 1) throw DataError("dataset: labels must be 0 or 1");
        }
        if (standardization) {
            const auto v = static_cast<std::size_t>(dim());
            if (standardization->mean.size() != v || standardization->stddev.size() != v) {
                throw DataError("dataset: standardization size does not match feature count");
            }
            for (double s : standardization->stddev) {
                if (!(s > 0.0)) throw DataError("dataset: standardization std must be positive");
            }
        }
    }
};

enum class Variant { kSoftplus, kSum, kStack, kSumStack, kLogistic };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::kSoftplus: return "softplus";
        case Variant::kSum: return "sum";
        case Variant::kStack: return "stack";
        case Variant::kSumStack: return "ss";
        case Variant::kLogistic: return "logistic";
    }
    return "unknown";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "softplus") return Variant::kSoftplus;
    if (s == "sum") return Variant::kSum;
    if (s == "stack") return Variant::kStack;
    if (s == "ss") return Variant::kSumStack;
    if (s == "logistic") return Variant::kLogistic;
    throw ParameterError("unknown variant '" + std::string(s) + "'");
}

/// Prune schedule {525, 575, ..., 4975} for a 5000-iteration chain.
inline std::set<int> default_prune_schedule() {
    std::set<int> s;
    for (int it = 525; it <= 4975; it += 50) s.insert(it);
    return s;
}

/// The default schedule rescaled to a chain of n_iter iterations; identical to
/// default_prune_schedule() when n_iter == 5000.
inline std::set<int> scaled_prune_schedule(int n_iter) {
    if (n_iter == 5000) return default_prune_schedule();
    std::set<int> s;
    for (int it = 525; it <= 4975; it += 50) {
        const int scaled = static_cast<int>(std::lround(static_cast<double>(it) * n_iter / 5000.0));
        if (scaled >= 1 && scaled < n_iter) s.insert(scaled);
    }
    return s;
}

struct HyperParams {
    int k_max = 20;
    int depth = 1;  // T
    double a0 = 0.01, b0 = 0.01;
    double e0 = 1.0, f0 = 1.0;
    double a_t = 1e-6, b_t = 1e-6;
    int n_iter = 5000;
    double burn_frac = 0.5;
    std::set<int> prune_iters = default_prune_schedule();
    int pg_truncation = dist::kDefaultPgTruncation;
    double eps_q = 1e-6;
    double alpha_floor = 1e-3;
    double gamma0_init = 1.0;
    double c0_init = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        detail::require(k_max >= 1, "hyperparams: K_max must be positive");
        detail::require(depth >= 1, "hyperparams: T must be positive");
        detail::require(a0 > 0 && b0 > 0 && e0 > 0 && f0 > 0 && a_t > 0 && b_t > 0, "hyperparams: prior constants must be positive");
        detail::require(n_iter >= 1, "hyperparams: n_iter must be positive");
        detail::require(burn_frac > 0.0 && burn_frac < 1.0, "hyperparams: burn_frac must lie in (0, 1)");
        detail::require(pg_truncation >= 1, "hyperparams: PG truncation must be at least 1");
        detail::require(eps_q > 0 && alpha_floor > 0, "hyperparams: floors must be positive");
        detail::require(gamma0_init > 0 && c0_init > 0, "hyperparams: initial gamma0 and c0 must be positive");
    }
};

/// One gamma-process atom: weight r and coefficient vectors beta^(2..T+1).
struct Expert {
    double r = 0.0;
    std::vector<Eigen::VectorXd> beta;  // beta[j] holds layer t = j + 2
};

struct ModelMeta {
    std::uint64_t seed = 0;
    int n_iter = 0;
    int k_max = 0;
    std::string provenance;
};

/// Point estimate {r_k, beta_k^(2:T+1)} for one labeling orientation.
struct FittedModel {
    Variant variant = Variant::kSumStack;
    int depth = 1;
    std::vector<Expert> experts;
    Orientation orientation = Orientation::kAsIs;
    std::optional<Standardization> standardization;
    double log_lik = 0.0;
    HyperParams hyper;
    ModelMeta meta;

    Eigen::Index dim() const { return experts.empty() ? -1 : experts.front().beta.front().size() - 1; }

    void validate() const {
        if (depth < 1) throw DataError("model: depth must be positive");
        const Eigen::Index width = experts.empty() ? 0 : experts.front().beta.front().size();
        for (const auto& e : experts) {
            if (!(e.r > 0.0)) throw DataError("model: expert weights must be positive");
            if (static_cast<int>(e.beta.size()) != depth) throw DataError("model: each expert needs T coefficient vectors");
            for (const auto& b : e.beta) {
                if (b.size() != width) throw DataError("model: coefficient vectors must share length V+1");
            }
        }
    }
};

/// Both labeling orientations, combined by the fusion rule.
struct FusedModel {
    FittedModel model_pos;  // trained with the original labels
    FittedModel model_neg;  // trained with the complemented labels

    void validate() const {
        model_pos.validate();
        model_neg.validate();
        if (model_pos.orientation == model_neg.orientation) throw DataError("fused model: orientations must be opposite");
        if (model_pos.standardization != model_neg.standardization) throw DataError("fused model: standardizations differ");
    }
};

/// ln(1 + e^z) without overflow.
inline double softplus_fn(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

/// ln(e^z - 1) for z >= 0; -inf at 0, +inf at +inf.
inline double log_expm1(double z) {
    if (z > 50.0) return z + std::log1p(-std::exp(-z));
    return std::log(std::expm1(z));
}

/// Stack-softplus layer values from the linear predictors eta[j] = x'beta^(j+2).
/// Returns q[0..T] holding q^(1..T+1); q^(1) = 1 and a zero layer stays zero.
inline std::vector<double> q_from_linear(std::span<const double> eta) {
    std::vector<double> q(eta.size() + 1, 0.0);
    q[0] = 1.0;
    for (std::size_t j = 0; j < eta.size(); ++j) {
        if (q[j] == 0.0) break;
        q[j + 1] = softplus_fn(eta[j] + std::log(q[j]));
    }
    return q;
}

inline std::vector<double> q_recursion(const Eigen::Ref<const Eigen::VectorXd>& x, std::span<const Eigen::VectorXd> betas) {
    std::vector<double> eta(betas.size());
    for (std::size_t j = 0; j < betas.size(); ++j) {
        if (betas[j].size() != x.size()) throw DataError("q_recursion: coefficient length does not match covariates");
        eta[j] = x.dot(betas[j]);
    }
    return q_from_linear(eta);
}

/// lambda(x) = sum_k r_k * q_k^(T+1)(x).
inline double rate(const Eigen::Ref<const Eigen::VectorXd>& x, const FittedModel& m) {
    if (!m.experts.empty() && x.size() != m.dim() + 1) {
        throw DataError("rate: covariate vector has " + std::to_string(x.size() - 1) + " features, model expects " +
                        std::to_string(m.dim()));
    }
    double lambda = 0.0;
    for (const auto& e : m.experts) lambda += e.r * q_recursion(x, e.beta).back();
    return lambda;
}

inline double prob_from_rate(double lambda) { return -std::expm1(-lambda); }

/// P(y = 1 | x) = 1 - e^{-lambda(x)}.
inline double predict_prob(const Eigen::Ref<const Eigen::VectorXd>& x, const FittedModel& m) {
    return prob_from_rate(rate(x, m));
}

/// (1 - e^{-lambda1} + e^{-lambda2}) / 2, the orientation-free predictive probability.
inline double fused_prob_from_rates(double lambda_pos, double lambda_neg) {
    return 0.5 * (-std::expm1(-lambda_pos) + std::exp(-lambda_neg));
}

inline double fused_prob(const Eigen::Ref<const Eigen::VectorXd>& x, const FusedModel& fm) {
    if (fm.model_pos.standardization != fm.model_neg.standardization) {
        throw DataError("fused_prob: component models use different standardizations");
    }
    if (fm.model_pos.orientation == fm.model_neg.orientation) {
        throw DataError("fused_prob: component models share an orientation");
    }
    return fused_prob_from_rates(rate(x, fm.model_pos), rate(x, fm.model_neg));
}

/// Hard label with ties resolved to 0.
inline int label_from_prob(double p, double p0 = 0.5) { return p > p0 ? 1 : 0; }

/// Bernoulli log-likelihood of labels under per-point rates; positive-label
/// rates are floored at eps so the sum stays finite.
inline double log_likelihood_from_rates(std::span<const int> y, std::span<const double> lambda, double eps = 1e-6) {
    double ll = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 1) {
            ll += std::log(-std::expm1(-std::max(lambda[i], eps)));
        } else {
            ll -= lambda[i];
        }
    }
    return ll;
}

inline double log_likelihood(const Dataset& d, const FittedModel& m, double eps = 1e-6) {
    std::vector<double> lambda(static_cast<std::size_t>(d.size()));
    for (Eigen::Index i = 0; i < d.size(); ++i) lambda[static_cast<std::size_t>(i)] = rate(d.x.row(i).transpose(), m);
    return log_likelihood_from_rates(d.y, lambda, eps);
}

}  // namespace softplus
