#pragma once

// Decision-boundary diagnostics: per-point counts of the half-space
// inequalities that bound (sum-softplus) or approximate (stack and
// sum-stack-softplus) the region where P(y = 1 | x) > p0.

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "softplus/error.hpp"
#include "softplus/model.hpp"

namespace softplus::geometry {

enum class Kind { kSumViolations, kStackSatisfied, kSumStackSatisfied };

struct GeometryReport {
    std::vector<int> counts;
    Kind kind = Kind::kSumStackSatisfied;
    double p0 = 0.5;
    std::vector<double> g;  // g[0] holds g_1
    std::vector<double> h;  // h[0] holds h_2
};

/// g_1 = 1, g_t = ln(1 + g_{t-1}) for t = 2..T, and
/// h_{T+1} = (1 - p0)^{-1/r} - 1, h_t = e^{h_{t+1}} - 1 for t = T..2.
/// log_h carries ln h_t computed without forming h_t, so thresholds stay finite
/// one level past the point where h itself overflows to +inf.
struct GH {
    std::vector<double> g;      // g[t - 1], t = 1..T
    std::vector<double> h;      // h[t - 2], t = 2..T+1
    std::vector<double> log_h;  // ln h_t, same indexing as h

    double g_at(int t) const { return g[static_cast<std::size_t>(t - 1)]; }
    double h_at(int t) const { return h[static_cast<std::size_t>(t - 2)]; }
    double log_h_at(int t) const { return log_h[static_cast<std::size_t>(t - 2)]; }

    /// ln h_t - ln g_{t-1}: the layer-t criterion threshold on x'beta^(t).
    double threshold(int t) const { return log_h_at(t) - std::log(g_at(t - 1)); }
};

inline void check_p0(double p0) {
    if (!(p0 > 0.0 && p0 < 1.0)) throw ParameterError("geometry: p0 must lie in (0, 1)");
}

/// -ln(1 - p0)
inline double rate_threshold(double p0) { return -std::log1p(-p0); }

/// ln[(1 - p0)^{-1/r} - 1], evaluated as log_expm1(-ln(1 - p0) / r).
inline double log_h_top(double r, double p0) { return log_expm1(rate_threshold(p0) / r); }

inline GH gh_recursions(int depth, double r, double p0) {
    check_p0(p0);
    detail::require(r > 0.0, "gh_recursions: r must be positive");
    detail::require(depth >= 1, "gh_recursions: T must be positive");
    GH out;
    out.g.resize(static_cast<std::size_t>(depth));
    out.g[0] = 1.0;
    for (int t = 2; t <= depth; ++t) out.g[static_cast<std::size_t>(t - 1)] = std::log1p(out.g[static_cast<std::size_t>(t - 2)]);
    out.h.resize(static_cast<std::size_t>(depth));
    out.log_h.resize(static_cast<std::size_t>(depth));
    const double top = rate_threshold(p0) / r;
    out.h[static_cast<std::size_t>(depth - 1)] = std::expm1(top);
    out.log_h[static_cast<std::size_t>(depth - 1)] = log_expm1(top);
    for (int t = depth; t >= 2; --t) {
        const double above = out.h[static_cast<std::size_t>(t - 1)];
        out.h[static_cast<std::size_t>(t - 2)] = std::expm1(above);
        out.log_h[static_cast<std::size_t>(t - 2)] = std::isinf(above) ? above : log_expm1(above);
    }
    return out;
}

/// Number of experts with x'beta_k > ln[(1 - p0)^{-1/r_k} - 1]. Zero means x
/// lies inside the convex polytope that bounds {P(y = 1 | x) <= p0}.
inline int sum_polytope_violations(const Eigen::Ref<const Eigen::VectorXd>& x, const FittedModel& m, double p0 = 0.5) {
    check_p0(p0);
    if (m.depth != 1) throw ParameterError("sum_polytope_violations: model must have T = 1");
    int count = 0;
    for (const auto& e : m.experts) {
        if (x.dot(e.beta.front()) > log_h_top(e.r, p0)) ++count;
    }
    return count;
}

/// Number of layers t in 2..T+1 with x'beta^(t) > ln h_t - ln g_{t-1} for a
/// single-expert model; T means x is inside the approximating polytope.
inline int stack_criteria_satisfied(const Eigen::Ref<const Eigen::VectorXd>& x, const FittedModel& m, double p0 = 0.5) {
    check_p0(p0);
    if (m.experts.size() != 1) throw ParameterError("stack_criteria_satisfied: model must have exactly one expert");
    const auto& e = m.experts.front();
    const GH gh = gh_recursions(m.depth, e.r, p0);
    int count = 0;
    for (int t = 2; t <= m.depth + 1; ++t) {
        const double thr = gh.threshold(t);
        if (std::isinf(thr) && thr > 0) continue;
        if (x.dot(e.beta[static_cast<std::size_t>(t - 2)]) > thr) ++count;
    }
    return count;
}

/// Number of experts whose stack inequality
/// x'beta_k^(T+1) + ln ln{...} > ln[(1 - p0)^{-1/r_k} - 1] holds, evaluated as
/// ln(e^{q_k^(T+1)} - 1) against the right-hand side. A nonzero count implies
/// P(y = 1 | x) > p0.
inline int ss_union_membership(const Eigen::Ref<const Eigen::VectorXd>& x, const FittedModel& m, double p0 = 0.5) {
    check_p0(p0);
    int count = 0;
    for (const auto& e : m.experts) {
        const double q = q_recursion(x, e.beta).back();
        if (q == 0.0) continue;
        if (log_expm1(q) > log_h_top(e.r, p0)) ++count;
    }
    return count;
}

inline Kind default_kind(const FittedModel& m) { return m.depth == 1 ? Kind::kSumViolations : Kind::kSumStackSatisfied; }

inline int evaluate(Kind kind, const Eigen::Ref<const Eigen::VectorXd>& x, const FittedModel& m, double p0) {
    switch (kind) {
        case Kind::kSumViolations: return sum_polytope_violations(x, m, p0);
        case Kind::kStackSatisfied: return stack_criteria_satisfied(x, m, p0);
        case Kind::kSumStackSatisfied: return ss_union_membership(x, m, p0);
    }
    return 0;
}

/// Geometry counts for every row of xs (rows carry the bias column).
inline GeometryReport report(const Eigen::MatrixXd& xs, const FittedModel& m, Kind kind, double p0 = 0.5) {
    check_p0(p0);
    GeometryReport rep;
    rep.kind = kind;
    rep.p0 = p0;
    const double r = m.experts.empty() ? 1.0 : m.experts.front().r;
    const GH gh = gh_recursions(m.depth, r, p0);
    rep.g = gh.g;
    rep.h = gh.h;
    rep.counts.reserve(static_cast<std::size_t>(xs.rows()));
    for (Eigen::Index i = 0; i < xs.rows(); ++i) rep.counts.push_back(evaluate(kind, xs.row(i).transpose(), m, p0));
    return rep;
}

}  // namespace softplus::geometry
