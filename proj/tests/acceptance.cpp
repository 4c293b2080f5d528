// Acceptance run: one PASS/FAIL/BLOCKED line per criterion 1-8.
//
//   acceptance --synthetic    criteria 1-5 and 8 (6 and 7 reported as not run)
//   acceptance --benchmarks   criteria 6 and 7, reading SOFTPLUS_DATA_DIR
//   acceptance                everything
//
// Exit status: 1 if any criterion failed, 77 if nothing ran because the
// benchmark data is missing, 0 otherwise.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "softplus/softplus.hpp"

using namespace softplus;

namespace {

enum class Status { kPass, kFail, kBlocked, kNotRun };

struct Outcome {
    Status status = Status::kFail;
    std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::kPass : Status::kFail, std::move(detail)}; }

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v << "%";
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double training_error(const Dataset& d, const FittedModel& m) {
    long wrong = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        wrong += label_from_prob(predict_prob(d.x.row(i).transpose(), m)) != d.y[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(d.size());
}

int significant_experts(const FittedModel& m) {
    int c = 0;
    for (const auto& e : m.experts) c += e.r > 1e-3 ? 1 : 0;
    return c;
}

HyperParams circle_hyper(Variant v, int depth, int k_max, int iters, std::uint64_t seed) {
    HyperParams hp;
    hp.depth = depth;
    hp.k_max = k_max;
    hp.n_iter = iters;
    hp.prune_iters = scaled_prune_schedule(iters);
    hp.seed = seed;
    return gibbs::apply_variant(hp, v);
}

// Circle data standardized the way `softplus train` does for dense input.
Dataset circle_dataset(std::uint64_t data_seed) {
    const auto raw = data::generate_synthetic(data::SyntheticKind::kCircle, data_seed);
    std::vector<std::size_t> all(static_cast<std::size_t>(raw.size()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto [scaled, params] = data::standardize(raw, all);
    return data::to_dataset(scaled, params);
}

// Counts every iteration at which m^(t)_{.k} grows with t or m^(t)_{..}
// drops below the number of positives. Kept apart from the sampler's own
// checks, which are switched off while this runs.
struct CountAudit {
    long iterations = 0;
    long monotone_failures = 0;
    long floor_failures = 0;

    std::function<void(const gibbs::ChainState&)> hook(const Dataset& d) {
        const long positives = static_cast<long>(d.positives());
        return [this, positives](const gibbs::ChainState& s) {
            ++iterations;
            std::vector<long> totals(static_cast<std::size_t>(s.depth + 1), 0);
            for (int k = 0; k < s.k_max; ++k) {
                long prev = -1;
                for (int t = 1; t <= s.depth + 1; ++t) {
                    long col = 0;
                    for (int i = 0; i < s.n; ++i) col += static_cast<long>(s.mcount(i, k, t));
                    if (prev >= 0 && col > prev) ++monotone_failures;
                    prev = col;
                    totals[static_cast<std::size_t>(t - 1)] += col;
                }
            }
            for (long tot : totals) floor_failures += tot < positives ? 1 : 0;
        };
    }
};

// ---- 1 ----

Outcome criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = diag::pg_suite(2024, 1'000'000, 6);
    const double secs = seconds_since(t0);
    int failed = 0;
    for (const auto& l : rep.lines) failed += l.rfind("FAIL", 0) == 0 ? 1 : 0;
    std::ostringstream os;
    os << rep.lines.size() << " checks over the (a, c) grid, " << failed << " failed, " << std::setprecision(3) << secs << " s";
    return verdict(rep.pass && secs < 60.0, os.str());
}

// ---- 2 ----

Outcome criterion2(std::uint64_t data_seed) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (int i = 0; i <= 60000; ++i) {
        const double z = -30.0 + i * 1e-3;
        worst = std::max(worst, std::fabs(-std::expm1(-softplus_fn(z)) - 1.0 / (1.0 + std::exp(-z))));
    }
    const bool identity_ok = worst < 1e-12;

    const auto dual = diag::duality_suite(2024);

    const Dataset d = circle_dataset(data_seed);
    gibbs::RunOptions opts;
    const auto sum = gibbs::run(d, circle_hyper(Variant::kSum, 1, 20, 500, 3), Variant::kSum, opts);
    const auto ss = gibbs::run(d, circle_hyper(Variant::kSumStack, 1, 20, 500, 3), Variant::kSumStack, opts);
    bool same = sum.trace.rows.size() == ss.trace.rows.size();
    for (std::size_t i = 0; same && i < sum.trace.rows.size(); ++i) {
        const auto& a = sum.trace.rows[i];
        const auto& b = ss.trace.rows[i];
        same = a.iter == b.iter && a.log_lik == b.log_lik && a.n_active == b.n_active && a.m_total == b.m_total;
    }
    for (Eigen::Index i = 0; same && i < d.size(); ++i) {
        same = predict_prob(d.x.row(i).transpose(), sum.model) == predict_prob(d.x.row(i).transpose(), ss.model);
    }
    const double secs = seconds_since(t0);

    std::ostringstream os;
    os << "max |1-e^-softplus - sigmoid| " << std::scientific << std::setprecision(2) << worst << std::defaultfloat
       << "; duality " << (dual.pass ? "ok" : "FAILED") << "; ss T=1 vs sum trace " << (same ? "identical" : "DIFFERENT")
       << " over 500 iterations; " << std::setprecision(3) << secs << " s";
    return verdict(identity_ok && dual.pass && same && secs < 60.0, os.str());
}

// ---- 3 ----

FittedModel random_model(dist::RngStream& rng, int k, int depth) {
    FittedModel m;
    m.depth = depth;
    for (int j = 0; j < k; ++j) {
        Expert e;
        e.r = std::exp(2.0 * rng.normal());
        for (int t = 0; t < depth; ++t) e.beta.push_back(Eigen::Vector3d(2 * rng.normal(), 2 * rng.normal(), 2 * rng.normal()));
        m.experts.push_back(e);
    }
    return m;
}

Outcome criterion3() {
    const auto t0 = std::chrono::steady_clock::now();
    dist::RngStream rng(77);
    auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.uniform() * (hi - lo + 1)); };
    long violation_misses = 0, union_misses = 0, rate_misses = 0, prob_misses = 0, sum_hits = 0, ss_hits = 0;
    const int pairs = 10000;
    for (int trial = 0; trial < pairs; ++trial) {
        const double p0 = 0.05 + 0.9 * rng.uniform();
        const double thr = -std::log1p(-p0);

        const auto sm = random_model(rng, pick(1, 6), 1);
        Eigen::Vector3d x(1.0, 3 * rng.normal(), 3 * rng.normal());
        const int v = geometry::sum_polytope_violations(x, sm, p0);
        if (v >= 1) {
            ++sum_hits;
            violation_misses += predict_prob(x, sm) > p0 ? 0 : 1;
        }
        if (rate(x, sm) <= thr && v != 0) ++rate_misses;

        const auto ssm = random_model(rng, pick(1, 6), pick(1, 6));
        x = Eigen::Vector3d(1.0, 3 * rng.normal(), 3 * rng.normal());
        const int u = geometry::ss_union_membership(x, ssm, p0);
        const double p = predict_prob(x, ssm);
        if (u >= 1) {
            ++ss_hits;
            union_misses += p > p0 ? 0 : 1;
        }
        if (p <= p0 && u != 0) ++prob_misses;
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << pairs << " pairs per family; counterexamples: polytope violation " << violation_misses << " (of " << sum_hits << " hits), union "
       << union_misses << " (of " << ss_hits << "), rate-below-threshold " << rate_misses << ", prob-below-threshold " << prob_misses << "; "
       << std::setprecision(3) << secs << " s";
    return verdict(violation_misses + union_misses + rate_misses + prob_misses == 0 && secs < 60.0, os.str());
}

// ---- 4 and 5 ----

struct CircleRun {
    double error = 0.0;
    int significant = 0;
    double secs = 0.0;
};

// (b) is judged at T = 20, the depth of the sum-stack circle fit; the T = 5
// pair is reported alongside when requested.
struct CircleOutcomes {
    CircleRun sum_asis, sum_flipped, ss_asis, ss_flipped;
    std::optional<std::pair<CircleRun, CircleRun>> ss_t5;
    CountAudit audit;
    int runs = 0;

    bool a() const { return sum_asis.error <= 5.0 && sum_asis.significant >= 3; }
    bool b() const { return ss_asis.error <= 5.0 && ss_flipped.error <= 5.0; }
    bool c() const { return sum_flipped.error > 20.0; }
};

CircleOutcomes circle_runs(std::uint64_t data_seed, double gamma0_init, bool audit, bool with_t5) {
    CircleOutcomes out;
    const Dataset asis = circle_dataset(data_seed);
    const Dataset flipped = data::flip_labels(asis);
    auto fit = [&](const Dataset& d, Variant v, int depth) {
        HyperParams hp = circle_hyper(v, depth, 20, 5000, 1);
        hp.gamma0_init = gamma0_init;
        gibbs::RunOptions opts;
        if (audit) {
            opts.check_invariants = false;
            opts.on_iteration = out.audit.hook(d);
        }
        const auto t0 = std::chrono::steady_clock::now();
        ++out.runs;
        const auto res = gibbs::run(d, hp, v, opts);
        return CircleRun{training_error(d, res.model), significant_experts(res.model), seconds_since(t0)};
    };
    out.sum_asis = fit(asis, Variant::kSum, 1);
    out.sum_flipped = fit(flipped, Variant::kSum, 1);
    out.ss_asis = fit(asis, Variant::kSumStack, 20);
    out.ss_flipped = fit(flipped, Variant::kSumStack, 20);
    if (with_t5) out.ss_t5 = std::pair{fit(asis, Variant::kSumStack, 5), fit(flipped, Variant::kSumStack, 5)};
    return out;
}

Outcome criterion4(const CircleOutcomes& c) {
    std::ostringstream os;
    os << c.audit.iterations << " audited iterations (" << c.runs << " runs x 5000); nonincreasing-in-t failures "
       << c.audit.monotone_failures << ", below-#positives failures " << c.audit.floor_failures;
    const bool complete = c.audit.iterations == 5000L * c.runs;
    return verdict(complete && c.audit.monotone_failures == 0 && c.audit.floor_failures == 0, os.str());
}

Outcome criterion5(const CircleOutcomes& base, const std::vector<std::pair<double, CircleOutcomes>>& sensitivity) {
    std::ostringstream os;
    os << "(a) sum ring=1: error " << pct(base.sum_asis.error) << ", " << base.sum_asis.significant << " experts r>0.001 "
       << (base.a() ? "ok" : "FAILED") << "; (b) ss T=20 K=20: errors " << pct(base.ss_asis.error) << " / "
       << pct(base.ss_flipped.error) << " " << (base.b() ? "ok" : "FAILED");
    if (base.ss_t5) os << " (T=5, not judged: " << pct(base.ss_t5->first.error) << " / " << pct(base.ss_t5->second.error) << ")";
    os << "; (c) sum flipped: error " << pct(base.sum_flipped.error) << " " << (base.c() ? "ok" : "FAILED");
    bool stable = true;
    for (const auto& [g0, s] : sensitivity) {
        const bool same = s.a() == base.a() && s.b() == base.b() && s.c() == base.c();
        stable = stable && same;
        os << "; gamma0 init " << g0 << ": " << pct(s.sum_asis.error) << "/" << s.sum_asis.significant << ", "
           << pct(s.ss_asis.error) << "/" << pct(s.ss_flipped.error) << ", " << pct(s.sum_flipped.error)
           << (same ? " same outcome" : " DIFFERENT outcome");
    }
    return verdict(base.a() && base.b() && base.c() && stable, os.str());
}

// ---- 6 and 7 ----

struct SplitData {
    Dataset train, test;
};

std::optional<std::vector<SplitData>> benchmark(const std::string& dir, const std::string& name, int splits) {
    std::vector<SplitData> out;
    for (int s = 1; s <= splits; ++s) {
        const auto loaded = data::load_benchmark_split(dir, name, s);
        if (!loaded) return std::nullopt;
        auto [train, test] = data::load_partition(loaded->first, loaded->second, true);
        out.push_back({std::move(train), std::move(test)});
    }
    return out;
}

HyperParams bench_hyper(Variant v, int depth, std::uint64_t seed) {
    HyperParams hp;
    hp.depth = depth;
    hp.k_max = 20;
    hp.n_iter = 5000;
    hp.prune_iters = default_prune_schedule();
    hp.seed = seed;
    return gibbs::apply_variant(hp, v);
}

double fused_test_error(const SplitData& s, Variant v, int depth, std::uint64_t seed) {
    const HyperParams hp = bench_hyper(v, depth, seed);
    FusedModel fm{gibbs::run(s.train, hp, v).model, gibbs::run(data::flip_labels(s.train), hp, v).model};
    long wrong = 0;
    for (Eigen::Index i = 0; i < s.test.size(); ++i) {
        wrong += label_from_prob(fused_prob(s.test.x.row(i).transpose(), fm)) != s.test.y[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(s.test.size());
}

Outcome criterion6(const std::string& dir) {
    struct Row {
        const char* name;
        double mean, sd;
    };
    const Row rows[] = {{"banana", 11.89, 0.61}, {"titanic", 22.29, 0.80}, {"image", 2.73, 0.53}, {"waveform", 11.69, 0.69}};
    std::vector<std::pair<std::string, std::vector<SplitData>>> sets;
    std::string missing;
    for (const auto& r : rows) {
        auto d = benchmark(dir, r.name, 3);
        if (!d) {
            missing += std::string(missing.empty() ? "" : ", ") + r.name;
            continue;
        }
        sets.emplace_back(r.name, std::move(*d));
    }
    if (!missing.empty()) return {Status::kBlocked, "benchmark splits not found under '" + dir + "': " + missing};

    std::ostringstream os;
    bool ok = true;
    for (std::size_t j = 0; j < sets.size(); ++j) {
        double mean = 0.0;
        for (const auto& s : sets[j].second) mean += fused_test_error(s, Variant::kSumStack, 5, 1) / 3.0;
        const double tol = std::max(3.0 * rows[j].sd, 2.0);
        const bool in = std::fabs(mean - rows[j].mean) <= tol;
        ok = ok && in;
        os << rows[j].name << " ss " << pct(mean) << (in ? "" : " OUT") << "; ";
    }
    double sum_titanic = 0.0;
    for (const auto& s : sets[1].second) sum_titanic += fused_test_error(s, Variant::kSum, 1, 1) / 3.0;
    const bool in = sum_titanic >= 20.0 && sum_titanic <= 25.0;
    os << "titanic sum " << pct(sum_titanic) << (in ? "" : " OUT");
    return verdict(ok && in, os.str());
}

Outcome criterion7(const std::string& dir) {
    const char* few[] = {"breast-cancer", "titanic", "german"};
    const char* many[] = {"banana", "image"};
    std::vector<std::pair<std::string, SplitData>> sets;
    std::string missing;
    for (const char* n : {few[0], few[1], few[2], many[0], many[1]}) {
        auto d = benchmark(dir, n, 1);
        if (!d) {
            missing += std::string(missing.empty() ? "" : ", ") + n;
            continue;
        }
        sets.emplace_back(n, std::move(d->front()));
    }
    if (!missing.empty()) return {Status::kBlocked, "benchmark splits not found under '" + dir + "': " + missing};

    std::ostringstream os;
    bool ok = true;
    for (std::size_t j = 0; j < sets.size(); ++j) {
        const auto& train = sets[j].second.train;
        const HyperParams hp = bench_hyper(Variant::kSum, 1, 1);
        const int asis = significant_experts(gibbs::run(train, hp, Variant::kSum).model);
        if (j < 3) {
            const bool in = asis <= 4;
            ok = ok && in;
            os << sets[j].first << " " << asis << (in ? "" : " TOO MANY") << "; ";
        } else {
            const int flipped = significant_experts(gibbs::run(data::flip_labels(train), hp, Variant::kSum).model);
            const bool in = std::max(asis, flipped) >= 2;
            ok = ok && in;
            os << sets[j].first << " " << asis << "/" << flipped << (in ? "" : " TOO FEW") << "; ";
        }
    }
    return verdict(ok, os.str() + "experts with r > 0.001, sum-softplus, split 1");
}

// ---- 8 ----

Outcome criterion8(std::uint64_t data_seed) {
    const Dataset d = circle_dataset(data_seed);
    const HyperParams hp = circle_hyper(Variant::kSumStack, 2, 5, 300, 11);
    auto file_of = [&](int workers) {
        gibbs::RunOptions opts;
        opts.workers = workers;
        return io::serialize({gibbs::run(d, hp, Variant::kSumStack, opts).model, std::nullopt});
    };
    const bool serial_same = file_of(1) == file_of(1);
    const bool parallel_same = file_of(2) == file_of(3);

    const io::ModelFile fused{FusedModel{gibbs::run(d, hp, Variant::kSumStack).model,
                                         gibbs::run(data::flip_labels(d), hp, Variant::kSumStack).model},
                              std::nullopt};
    const std::string text = io::serialize(fused);
    const io::ModelFile back = io::deserialize(text);
    bool exact = io::serialize(back) == text;
    for (Eigen::Index i = 0; exact && i < d.size(); ++i) exact = fused.prob(d.x.row(i).transpose()) == back.prob(d.x.row(i).transpose());

    std::ostringstream os;
    os << "same seed, 1 worker: " << (serial_same ? "identical" : "DIFFERENT") << "; 2 vs 3 workers: "
       << (parallel_same ? "identical" : "DIFFERENT") << "; fused round trip: " << (exact ? "bit-exact" : "MISMATCH");
    return verdict(serial_same && parallel_same && exact, os.str());
}

void print(int id, const Outcome& o, double secs) {
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kFail ? "FAIL" : o.status == Status::kBlocked ? "BLOCKED" : "NOT RUN";
    std::cout << "criterion " << id << ": " << tag << "  " << o.detail << "  [" << std::fixed << std::setprecision(1) << secs
              << " s]" << std::defaultfloat << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-8"};
    bool synthetic = false, benchmarks = false;
    std::uint64_t data_seed = 7;
    std::string data_dir;
    app.add_flag("--synthetic", synthetic, "Criteria 1-5 and 8");
    app.add_flag("--benchmarks", benchmarks, "Criteria 6 and 7");
    app.add_option("--circle-seed", data_seed, "Seed of the circle dataset");
    app.add_option("--data-dir", data_dir, "Benchmark directory (default $SOFTPLUS_DATA_DIR)");
    CLI11_PARSE(app, argc, argv);
    if (!synthetic && !benchmarks) synthetic = benchmarks = true;
    if (data_dir.empty()) {
        const char* env = std::getenv("SOFTPLUS_DATA_DIR");
        data_dir = env ? env : "data";
    }

    std::vector<Status> seen;
    auto report = [&](int id, const std::function<Outcome()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {Status::kFail, std::string("error: ") + e.what()};
        }
        print(id, o, seconds_since(t0));
        seen.push_back(o.status);
    };
    auto not_run = [&](int id, const char* why) { print(id, {Status::kNotRun, why}, 0.0); };

    if (synthetic) {
        report(1, criterion1);
        report(2, [&] { return criterion2(data_seed); });
        report(3, criterion3);
        CircleOutcomes base;
        std::vector<std::pair<double, CircleOutcomes>> sensitivity;
        std::string circle_error;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            base = circle_runs(data_seed, 1.0, true, true);
            for (double g0 : {0.1, 10.0}) sensitivity.emplace_back(g0, circle_runs(data_seed, g0, false, false));
        } catch (const std::exception& e) {
            circle_error = e.what();
        }
        const double secs = seconds_since(t0);
        if (circle_error.empty()) {
            print(4, criterion4(base), secs);
            print(5, criterion5(base, sensitivity), secs);
            seen.push_back(criterion4(base).status);
            seen.push_back(criterion5(base, sensitivity).status);
        } else {
            for (int id : {4, 5}) {
                print(id, {Status::kFail, "error: " + circle_error}, secs);
                seen.push_back(Status::kFail);
            }
        }
    } else {
        for (int id : {1, 2, 3, 4, 5}) not_run(id, "synthetic criteria not requested (--synthetic)");
    }
    if (benchmarks) {
        report(6, [&] { return criterion6(data_dir); });
        report(7, [&] { return criterion7(data_dir); });
    } else {
        for (int id : {6, 7}) not_run(id, "benchmark criteria not requested (--benchmarks)");
    }
    if (synthetic) {
        report(8, [&] { return criterion8(data_seed); });
    } else {
        not_run(8, "synthetic criteria not requested (--synthetic)");
    }

    bool any_fail = false, any_ran = false;
    for (auto s : seen) {
        any_fail = any_fail || s == Status::kFail;
        any_ran = any_ran || s == Status::kPass || s == Status::kFail;
    }
    if (any_fail) return 1;
    return any_ran ? 0 : 77;
}
