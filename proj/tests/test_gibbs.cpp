#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "softplus/data.hpp"
#include "softplus/gibbs.hpp"

using namespace softplus;
using namespace softplus::gibbs;

namespace {

Dataset circle(std::uint64_t seed = 1) { return data::to_dataset(data::generate_synthetic(data::SyntheticKind::kCircle, seed)); }

Dataset single_point(int label) {
    Dataset d;
    d.x.resize(1, 2);
    d.x << 1.0, 0.0;
    d.y = {label};
    return d;
}

HyperParams small_hp(int k, int depth, int iters) {
    HyperParams hp;
    hp.k_max = k;
    hp.depth = depth;
    hp.n_iter = iters;
    hp.prune_iters = scaled_prune_schedule(iters);
    hp.seed = 5;
    return hp;
}

double training_error(const Dataset& d, const FittedModel& m) {
    int wrong = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        wrong += label_from_prob(predict_prob(d.x.row(i).transpose(), m)) != d.y[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(wrong) / static_cast<double>(d.size());
}

}  // namespace

TEST(InitState, Defaults) {
    const auto d = circle();
    const auto s = init_state(d, small_hp(20, 2, 10));
    for (double r : s.r) EXPECT_DOUBLE_EQ(r, 0.05);
    EXPECT_EQ(s.gamma0, 1.0);
    EXPECT_EQ(s.c0, 1.0);
    EXPECT_EQ(s.n_active(), 20);
    for (int i = 0; i < s.n; i += 37) {
        EXPECT_EQ(s.q(i, 3, 1), 1.0);
        EXPECT_NEAR(s.q(i, 3, 2), std::log(2.0), 1e-15);
        EXPECT_NEAR(s.q(i, 3, 3), std::log1p(std::log(2.0)), 1e-15);
        EXPECT_EQ(s.mcount(i, 3, 1), 0u);
    }
    EXPECT_EQ(s.alpha[0][0](0), 1.0);
}

TEST(InitState, RejectsEmptyData) {
    Dataset empty;
    empty.x.resize(0, 3);
    EXPECT_THROW(init_state(empty, HyperParams{}), DataError);
    Dataset no_features;
    no_features.x = Eigen::MatrixXd::Ones(3, 1);
    no_features.y = {0, 1, 0};
    EXPECT_THROW(init_state(no_features, HyperParams{}), DataError);
}

TEST(ThetaSweep, GammaMeanWithoutCounts) {
    const auto d = single_point(0);
    auto hp = small_hp(1, 1, 1);
    auto s = init_state(d, hp);
    s.r[0] = 0.05;
    dist::RngStream rng(80);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        sample_theta_expert(s, hp, 0, rng);
        sum += s.tau(0, 0, 1);
    }
    // tau ~ Gamma(0.05, 1 - e^{-ln 2}) has mean 0.025 and variance 0.0125
    EXPECT_NEAR(sum / n, 0.025, 4.0 * std::sqrt(0.0125 / n));
}

TEST(ThetaSweep, DegenerateScalesAndFloor) {
    const auto d = single_point(1);
    auto hp = small_hp(1, 2, 1);
    auto s = init_state(d, hp);
    dist::RngStream rng(81);
    s.q(0, 0, 2) = 0.0;
    s.q(0, 0, 3) = 0.0;
    sample_theta_expert(s, hp, 0, rng);
    EXPECT_EQ(s.tau(0, 0, 2), 0.0);
    EXPECT_EQ(s.theta(0, 0, 2), 0.0);

    s.q(0, 0, 3) = 1.0;
    sample_theta_expert(s, hp, 0, rng);
    ASSERT_GT(s.tau(0, 0, 2), 0.0);
    EXPECT_EQ(s.theta(0, 0, 2), s.tau(0, 0, 2) / hp.eps_q);
}

TEST(Counts, NegativeLabelsAndSingleExpert) {
    Dataset d;
    d.x.resize(2, 2);
    d.x << 1, 0.3, 1, -0.2;
    d.y = {0, 1};
    auto hp = small_hp(3, 1, 1);
    auto s = init_state(d, hp);
    s.active = {0, 1, 0};
    s.theta(0, 1, 1) = 2.0;
    s.theta(1, 1, 1) = 2.0;
    dist::RngStream rng(82);
    for (int rep = 0; rep < 100; ++rep) {
        sample_counts(s, d, hp, rng);
        EXPECT_EQ(s.m[0], 0u);
        for (int k = 0; k < 3; ++k) EXPECT_EQ(s.mcount(0, k, 1), 0u);
        EXPECT_GE(s.m[1], 1u);
        EXPECT_EQ(s.mcount(1, 1, 1), s.m[1]);
    }
}

TEST(Counts, TruncatedPoissonMean) {
    const auto d = single_point(1);
    auto hp = small_hp(2, 1, 1);
    auto s = init_state(d, hp);
    s.theta(0, 0, 1) = 2.0;
    s.theta(0, 1, 1) = 3.0;
    dist::RngStream rng(83);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        sample_counts(s, d, hp, rng);
        sum += static_cast<double>(s.m[0]);
    }
    EXPECT_NEAR(sum / n / (5.0 / -std::expm1(-5.0)), 1.0, 0.01);
}

TEST(Counts, ZeroRatesUseFloor) {
    const auto d = single_point(1);
    auto hp = small_hp(2, 1, 1);
    auto s = init_state(d, hp);
    dist::RngStream rng(84);
    sample_counts(s, d, hp, rng);
    EXPECT_EQ(s.m[0], 1u);
    EXPECT_EQ(s.mcount(0, 0, 1) + s.mcount(0, 1, 1), 1u);
}

TEST(Upward, CrtEdgeCounts) {
    Dataset d;
    d.x.resize(2, 2);
    d.x << 1, 0.5, 1, -0.5;
    d.y = {1, 1};
    auto hp = small_hp(1, 3, 1);
    auto s = init_state(d, hp);
    dist::RngStream rng(85);
    for (int rep = 0; rep < 50; ++rep) {
        s.theta(0, 0, 2) = 0.7;
        s.theta(0, 0, 3) = 0.7;
        s.theta(1, 0, 2) = 0.7;
        s.theta(1, 0, 3) = 0.7;
        s.mcount(0, 0, 1) = 0;
        s.mcount(1, 0, 1) = 1;
        upward_expert(s, d, hp, 0, rng);
        for (int t = 2; t <= 4; ++t) {
            EXPECT_EQ(s.mcount(0, 0, t), 0u);
            EXPECT_EQ(s.mcount(1, 0, t), 1u);
        }
    }
}

TEST(Upward, NoWeightsGivesPriorDraw) {
    // theta^(2) = 0 and m^(1) = 0 make omega = 0 and the linear term zero,
    // so beta^(2) is drawn from Normal(0, diag(alpha)^-1).
    Dataset d;
    d.x.resize(3, 3);
    d.x << 1, 0.5, -1, 1, 2, 0, 1, -1, 1;
    d.y = {0, 0, 0};
    auto hp = small_hp(1, 2, 1);
    auto s = init_state(d, hp);
    dist::RngStream rng(86);
    const int n = 40000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sq = Eigen::VectorXd::Zero(3);
    for (int rep = 0; rep < n; ++rep) {
        for (int i = 0; i < 3; ++i) {
            s.theta(i, 0, 2) = 0.0;
            s.mcount(i, 0, 1) = 0;
        }
        s.alpha[0][0].setOnes();
        upward_expert(s, d, hp, 0, rng);
        for (int i = 0; i < 3; ++i) ASSERT_EQ(s.omega(i, 0, 2), 0.0);
        sum += s.beta[0][0];
        sq += s.beta[0][0].cwiseAbs2();
    }
    for (int v = 0; v < 3; ++v) {
        EXPECT_NEAR(sum(v) / n, 0.0, 4.0 / std::sqrt(n));
        EXPECT_NEAR(sq(v) / n, 1.0, 0.03);
    }
}

TEST(Upward, QMatchesRecursionAfterSweep) {
    const auto d = circle(2);
    auto hp = small_hp(3, 4, 1);
    auto s = init_state(d, hp);
    dist::RngStream rng(87);
    for (int it = 0; it < 5; ++it) {
        sample_theta_sweep(s, hp, rng);
        sample_counts(s, d, hp, rng);
        upward_sweep(s, d, hp, rng);
        EXPECT_LT(q_consistency_error(s, d), 1e-10);
        check_count_invariants(s, d);
    }
}

TEST(Globals, ZeroCountsGiveZeroTables) {
    const auto d = single_point(0);
    auto hp = small_hp(4, 1, 1);
    auto s = init_state(d, hp);
    dist::RngStream rng(88);
    sample_globals(s, hp, rng);
    for (auto l : s.ltilde) EXPECT_EQ(l, 0u);
}

TEST(Globals, PriorRestorationForGamma0) {
    const auto d = single_point(0);
    auto hp = small_hp(4, 1, 1);
    hp.a0 = 2.0;
    hp.b0 = 4.0;
    auto s = init_state(d, hp);
    s.active.assign(4, 0);
    dist::RngStream rng(89);
    const int n = 100000;
    double sum = 0.0, ratio = 0.0;
    for (int i = 0; i < n; ++i) {
        sample_globals(s, hp, rng);
        sum += s.gamma0;
        // inactive experts: r_k ~ Gamma(gamma0 / K, 1 / c0) given the new gamma0, c0
        ratio += s.r[1] * s.c0 * 4.0 / s.gamma0;
    }
    EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(0.125 / n));
    EXPECT_NEAR(ratio / n, 1.0, 0.03);
}

TEST(Globals, LogisticKeepsRFixed) {
    const auto d = single_point(1);
    auto hp = small_hp(1, 1, 1);
    auto s = init_state(d, hp);
    s.r[0] = 1.0;
    dist::RngStream rng(90);
    sample_globals(s, hp, rng, true);
    EXPECT_EQ(s.r[0], 1.0);
}

TEST(Prune, Schedule) {
    const auto d = circle();
    auto hp = small_hp(3, 1, 1000);
    hp.prune_iters = {525};
    auto s = init_state(d, hp);
    s.mcount(4, 0, 1) = 2;
    s.mcount(9, 2, 1) = 1;
    s.iter = 524;
    EXPECT_EQ(prune(s, hp), 0);
    EXPECT_EQ(s.n_active(), 3);
    s.iter = 525;
    EXPECT_EQ(prune(s, hp), 1);
    EXPECT_FALSE(s.is_active(1));
    EXPECT_EQ(s.q(0, 1, 1), 1.0);
    EXPECT_EQ(s.q(0, 1, 2), 0.0);
    EXPECT_EQ(prune(s, hp), 0);
}

TEST(Run, InvariantsAndQConsistencyHold) {
    const auto d = circle(3);
    RunOptions opts;
    opts.check_q_consistency = true;
    const auto res = run(d, small_hp(6, 3, 150), Variant::kSumStack, opts);
    EXPECT_LT(res.max_q_inconsistency, 1e-10);
    ASSERT_EQ(res.trace.rows.size(), 150u);
    const auto positives = d.positives();
    for (const auto& row : res.trace.rows) {
        for (std::size_t t = 1; t < row.m_total.size(); ++t) EXPECT_LE(row.m_total[t], row.m_total[t - 1]);
        for (auto c : row.m_total) EXPECT_GE(c, positives);
    }
    EXPECT_GT(res.best_iter, 75);
}

TEST(Run, DepthOneSumStackEqualsSum) {
    const auto d = circle(4);
    const auto a = run(d, small_hp(8, 1, 120), Variant::kSumStack);
    const auto b = run(d, small_hp(8, 1, 120), Variant::kSum);
    EXPECT_TRUE(a.trace == b.trace);
}

TEST(Run, StackDepthOneEqualsSoftplus) {
    const auto d = circle(4);
    const auto a = run(d, small_hp(1, 1, 100), Variant::kStack);
    const auto b = run(d, small_hp(1, 1, 100), Variant::kSoftplus);
    EXPECT_TRUE(a.trace == b.trace);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        EXPECT_EQ(predict_prob(d.x.row(i).transpose(), a.model), predict_prob(d.x.row(i).transpose(), b.model));
    }
}

TEST(Run, SingleWorkerIsDeterministic) {
    const auto d = circle(5);
    const auto a = run(d, small_hp(5, 2, 80), Variant::kSumStack);
    const auto b = run(d, small_hp(5, 2, 80), Variant::kSumStack);
    EXPECT_TRUE(a.trace == b.trace);
    auto other = small_hp(5, 2, 80);
    other.seed = 6;
    EXPECT_FALSE(run(d, other, Variant::kSumStack).trace == a.trace);
}

TEST(Run, ParallelResultDoesNotDependOnWorkerCount) {
    const auto d = circle(6);
    RunOptions two, four;
    two.workers = 2;
    four.workers = 4;
    const auto a = run(d, small_hp(6, 2, 60), Variant::kSumStack, two);
    const auto b = run(d, small_hp(6, 2, 60), Variant::kSumStack, four);
    EXPECT_TRUE(a.trace == b.trace);
}

TEST(Run, LogisticSeparatesBlobs) {
    dist::RngStream rng(91);
    data::RawTable t;
    t.features.resize(100, 2);
    for (int i = 0; i < 100; ++i) {
        const double c = i < 50 ? 3.0 : -3.0;
        t.features(i, 0) = c + 0.5 * rng.normal();
        t.features(i, 1) = c + 0.5 * rng.normal();
        t.labels.push_back(i < 50 ? 1 : 0);
    }
    const auto d = data::to_dataset(t);
    const auto res = run(d, small_hp(1, 1, 500), Variant::kLogistic);
    ASSERT_EQ(res.model.experts.size(), 1u);
    EXPECT_EQ(res.model.experts[0].r, 1.0);
    EXPECT_EQ(training_error(d, res.model), 0.0);
}

TEST(Run, VariantDimensionsAreChecked) {
    const auto d = circle();
    EXPECT_THROW(run(d, small_hp(4, 2, 5), Variant::kSum), ParameterError);
    EXPECT_THROW(run(d, small_hp(4, 2, 5), Variant::kStack), ParameterError);
    EXPECT_THROW(run(d, small_hp(2, 1, 5), Variant::kLogistic), ParameterError);
    const auto hp = apply_variant(small_hp(4, 3, 5), Variant::kSoftplus);
    EXPECT_EQ(hp.k_max, 1);
    EXPECT_EQ(hp.depth, 1);
}

TEST(Run, TraceCsvHeader) {
    const auto res = run(circle(), small_hp(2, 2, 3), Variant::kSumStack);
    std::ostringstream os;
    res.trace.write(os);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "iter,log_lik,n_active,m_total_1,m_total_2,m_total_3");
}

namespace {

// Run the augmented chain on one point with x = (1, 0), K = T = 1, r fixed and
// alpha pinned at 1, and compare the draws of beta_0 with the exact posterior
// N(0, 1) * P(y | beta_0), P(y = 1 | beta_0) = 1 - (1 + e^{beta_0})^{-r}.
double small_instance_pvalue(int label, double r, std::uint64_t seed) {
    const auto d = single_point(label);
    auto hp = small_hp(1, 1, 1);
    auto s = init_state(d, hp);
    s.r[0] = r;
    dist::RngStream rng(seed);
    const int burn = 500, thin = 5, keep = 20000;
    std::vector<double> draws;
    for (int it = 0; it < burn + thin * keep; ++it) {
        sample_theta_sweep(s, hp, rng);
        sample_counts(s, d, hp, rng);
        s.alpha[0][0].setOnes();
        upward_sweep(s, d, hp, rng);
        if (it >= burn && (it - burn) % thin == 0) draws.push_back(s.beta[0][0](0));
    }
    auto density = [&](double b) {
        const double p1 = 1.0 - std::pow(1.0 + std::exp(b), -r);
        return std::exp(-0.5 * b * b) * (label == 1 ? p1 : 1.0 - p1);
    };
    // cumulative posterior mass on a fine grid, then 20 equal-mass bins
    const double lo = -10.0, hi = 10.0;
    const int grid = 200000;
    const double h = (hi - lo) / grid;
    std::vector<double> cdf(grid + 1, 0.0);
    for (int g = 1; g <= grid; ++g) cdf[g] = cdf[g - 1] + 0.5 * h * (density(lo + (g - 1) * h) + density(lo + g * h));
    for (auto& c : cdf) c /= cdf.back();
    const int bins = 20;
    std::vector<double> edges;
    for (int b = 1; b < bins; ++b) {
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), static_cast<double>(b) / bins);
        edges.push_back(lo + static_cast<double>(it - cdf.begin()) * h);
    }
    std::vector<double> obs(bins, 0.0), exp(bins, static_cast<double>(draws.size()) / bins);
    for (double x : draws) obs[static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin())] += 1.0;
    return oracle::chi_square(obs, exp).p;
}

}  // namespace

TEST(Augmentation, SmallInstancePosteriorPositiveLabel) { EXPECT_GT(small_instance_pvalue(1, 2.0, 92), 0.01); }

TEST(Augmentation, SmallInstancePosteriorNegativeLabel) { EXPECT_GT(small_instance_pvalue(0, 0.7, 93), 0.01); }
