// softplus: train, predict, evaluate and inspect softplus regression models.
//
//   softplus synth circle --seed 7 --out circle/
//   softplus train --data circle/features.csv --labels circle/labels.csv --variant ss --T 5 --orientation both --out m.json
//   softplus predict --model m.json --data circle/features.csv --out probs.csv
//   softplus eval --model m.json --data circle/features.csv --labels circle/labels.csv
//   softplus grid --model m.json --bounds=-4,4,-4,4 --resolution 100 --out grid.csv
//   softplus diag pg

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "softplus/softplus.hpp"

namespace fs = std::filesystem;
using namespace softplus;

namespace {

struct DataFlags {
    std::string data;
    std::string labels;
    std::string format = "auto";
    std::string label_column = "last";
    std::string partition_file;
    std::string test_partition_file;
    int partition = 1;
    std::string split = "auto";
    std::string standardize = "auto";
    int dim = 0;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool with_split) {
    cmd->add_option("--data", f.data, "Feature file (dense delimited text or sparse idx:val)")->required();
    cmd->add_option("--labels", f.labels, "Separate label file, one label per line");
    cmd->add_option("--format", f.format, "auto, dense or sparse")->check(CLI::IsMember({"auto", "dense", "sparse"}));
    cmd->add_option("--label-column", f.label_column, "Label position in dense files: last, first or none")
        ->check(CLI::IsMember({"last", "first", "none"}));
    cmd->add_option("--partition-file", f.partition_file, "File whose lines list 1-based training indices");
    cmd->add_option("--partition", f.partition, "Which line of the partition file to use (1-based)");
    cmd->add_option("--test-partition-file", f.test_partition_file, "Matching file of test indices (default: complement)");
    cmd->add_option("--dim", f.dim, "Minimum feature count for sparse files");
    if (with_split) {
        cmd->add_option("--split", f.split, "Rows to use with a partition: train, test or all (default test)")
            ->check(CLI::IsMember({"auto", "train", "test", "all"}));
    } else {
        cmd->add_option("--standardize", f.standardize, "auto (on for dense, off for sparse), on or off")
            ->check(CLI::IsMember({"auto", "on", "off"}));
    }
}

bool looks_sparse(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        return line.find(':') != std::string::npos;
    }
    return false;
}

struct Loaded {
    data::RawTable table;
    bool sparse = false;
};

Loaded load_table(const DataFlags& f, int min_dim = 0) {
    const std::string path = data::resolve_data_path(f.data);
    Loaded out;
    out.sparse = f.format == "sparse" || (f.format == "auto" && looks_sparse(path));
    if (out.sparse) {
        out.table = data::parse_sparse(path, std::max(f.dim, min_dim));
        if (!f.labels.empty()) throw DataError("--labels is not used with sparse files (labels are inline)");
        return out;
    }
    data::DenseOptions opts;
    if (!f.labels.empty()) {
        opts.labels_path = data::resolve_data_path(f.labels);
    } else {
        opts.label_column = f.label_column == "first" ? data::LabelColumn::kFirst
                            : f.label_column == "none" ? data::LabelColumn::kNone
                                                       : data::LabelColumn::kLast;
    }
    out.table = data::parse_dense(path, opts);
    return out;
}

std::optional<data::PartitionSpec> partition_of(const DataFlags& f, const data::RawTable& t) {
    if (f.partition_file.empty()) return std::nullopt;
    std::optional<std::string> test;
    if (!f.test_partition_file.empty()) test = data::resolve_data_path(f.test_partition_file);
    return data::read_partition(data::resolve_data_path(f.partition_file), f.partition, static_cast<std::size_t>(t.size()), test);
}

std::vector<std::size_t> all_rows(const data::RawTable& t) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(t.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

// Rows for predict/eval with the model's own standardization applied.
Dataset evaluation_rows(const DataFlags& f, const io::ModelFile& model) {
    const auto loaded = load_table(f, static_cast<int>(model.dim()));
    data::RawTable t = loaded.table;
    if (t.dim() != model.dim()) {
        throw DataError("data has " + std::to_string(t.dim()) + " features, model expects V = " + std::to_string(model.dim()));
    }
    if (const auto spec = partition_of(f, t)) {
        const std::string side = f.split == "auto" ? "test" : f.split;
        if (side == "train") t = data::select_rows(t, spec->train_idx);
        if (side == "test") t = data::select_rows(t, spec->test_idx);
    }
    if (model.standardization()) t = data::apply_standardization(t, *model.standardization());
    return data::to_dataset(t, model.standardization());
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
    const fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

void write_trace(const gibbs::Trace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write trace '" + path + "'");
    trace.write(out);
}

// ---- synth ----

int cmd_synth(const std::string& kind, std::uint64_t seed, const std::string& out_dir) {
    const auto t = data::generate_synthetic(data::parse_synthetic_kind(kind), seed);
    fs::create_directories(out_dir);
    const auto features = (fs::path(out_dir) / "features.csv").string();
    const auto labels = (fs::path(out_dir) / "labels.csv").string();
    data::write_dense(t, features, labels);
    std::cout << "wrote " << t.size() << " rows to " << features << " and " << labels << "\n";
    return 0;
}

// ---- train ----

struct TrainFlags {
    DataFlags data;
    std::string variant = "ss";
    int depth = 1;
    int k_max = 20;
    int iters = 5000;
    std::uint64_t seed = 1;
    std::string orientation = "asis";
    std::string out;
    std::string trace;
    int workers = 1;
    double burn_frac = 0.5;
    int pg_truncation = dist::kDefaultPgTruncation;
    double gamma0_init = 1.0;
};

int cmd_train(const TrainFlags& f, bool depth_given, bool kmax_given) {
    const Variant variant = parse_variant(f.variant);
    HyperParams hp;
    hp.k_max = f.k_max;
    hp.depth = f.depth;
    hp.n_iter = f.iters;
    hp.prune_iters = scaled_prune_schedule(f.iters);
    hp.seed = f.seed;
    hp.burn_frac = f.burn_frac;
    hp.pg_truncation = f.pg_truncation;
    hp.gamma0_init = f.gamma0_init;
    // dimensions the variant pins are filled in unless the user set them
    const HyperParams pinned = gibbs::apply_variant(hp, variant);
    if (!depth_given) hp.depth = pinned.depth;
    if (!kmax_given) hp.k_max = pinned.k_max;
    gibbs::check_variant(hp, variant);

    const auto loaded = load_table(f.data);
    data::RawTable t = loaded.table;
    if (const auto spec = partition_of(f.data, t)) t = data::select_rows(t, spec->train_idx);
    const bool standardize = f.data.standardize == "on" || (f.data.standardize == "auto" && !loaded.sparse);
    std::optional<Standardization> params;
    if (standardize) {
        auto [scaled, p] = data::standardize(t, all_rows(t));
        t = std::move(scaled);
        params = p;
    }
    const Dataset asis = data::to_dataset(t, params);

    std::ostringstream prov;
    prov << "softplus train variant=" << to_string(variant) << " T=" << hp.depth << " Kmax=" << hp.k_max << " iters=" << hp.n_iter
         << " seed=" << hp.seed << " data=" << fs::path(f.data.data).filename().string();

    gibbs::RunOptions opts;
    opts.workers = f.workers;
    auto fit = [&](const Dataset& d, const std::string& trace_path) {
        const auto start = std::chrono::steady_clock::now();
        gibbs::RunResult res;
        try {
            res = gibbs::run(d, hp, variant, opts);
        } catch (const gibbs::ChainFailure& e) {
            const std::string dump = trace_path.empty() ? with_suffix(f.out, "_failed_trace") + ".csv" : trace_path;
            write_trace(e.trace(), dump);
            std::cerr << "trace written to " << dump << "\n";
            throw;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!trace_path.empty()) write_trace(res.trace, trace_path);
        res.model.meta.provenance = prov.str() + " orientation=" + std::string(to_string(d.orientation));
        int significant = 0;
        for (const auto& e : res.model.experts) significant += e.r > 1e-3 ? 1 : 0;
        std::cout << "orientation " << to_string(d.orientation) << ": log-lik " << std::setprecision(10) << res.model.log_lik
                  << " (iteration " << res.best_iter << "), active experts " << res.model.experts.size() << " (" << significant
                  << " with r > 0.001), wall time " << std::setprecision(3) << secs << " s\n";
        return res.model;
    };

    io::ModelFile file{FittedModel{}, std::nullopt};
    if (!f.trace.empty()) file.trace_path = f.trace;
    if (f.orientation == "both") {
        const std::string tr_pos = f.trace.empty() ? "" : f.trace;
        const std::string tr_neg = f.trace.empty() ? "" : with_suffix(f.trace, "_flipped");
        FusedModel fm{fit(asis, tr_pos), fit(data::flip_labels(asis), tr_neg)};
        file.content = std::move(fm);
    } else {
        file.content = fit(f.orientation == "flipped" ? data::flip_labels(asis) : asis, f.trace);
    }
    io::save(file, f.out);
    std::cout << "model written to " << f.out << "\n";
    return 0;
}

// ---- predict / eval ----

int cmd_predict(const std::string& model_path, const DataFlags& df, const std::string& out_path, std::optional<double> p0) {
    const auto model = io::load(model_path);
    const Dataset d = evaluation_rows(df, model);
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw DataError("cannot write '" + out_path + "'");
    }
    std::ostream& os = out_path.empty() ? std::cout : file;
    os << (p0 ? "prob,label\n" : "prob\n") << std::setprecision(17);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double p = model.prob(d.x.row(i).transpose());
        os << p;
        if (p0) os << ',' << label_from_prob(p, *p0);
        os << '\n';
    }
    return 0;
}

int cmd_eval(const std::string& model_path, const DataFlags& df, double p0) {
    const auto model = io::load(model_path);
    const Dataset d = evaluation_rows(df, model);
    if (d.size() == 0) throw DataError("no rows to evaluate");
    long tp = 0, fp = 0, tn = 0, fn = 0;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double p = model.prob(d.x.row(i).transpose());
        const int y = d.y[static_cast<std::size_t>(i)];
        const int yhat = label_from_prob(p, p0);
        (y == 1 ? (yhat == 1 ? tp : fn) : (yhat == 1 ? fp : tn)) += 1;
        const double pc = std::clamp(p, 1e-12, 1.0 - 1e-12);
        ll += y == 1 ? std::log(pc) : std::log1p(-pc);
    }
    const double n = static_cast<double>(d.size());
    std::cout << std::fixed << std::setprecision(2) << "error " << 100.0 * static_cast<double>(fp + fn) / n << "%\n"
              << "confusion tp=" << tp << " fp=" << fp << " tn=" << tn << " fn=" << fn << "\n"
              << std::setprecision(6) << "mean log-likelihood " << ll / n << "\n";
    return 0;
}

// ---- grid ----

int cmd_grid(const std::string& model_path, const std::vector<double>& bounds, int resolution, double p0, const std::string& kind,
             const std::string& out_path) {
    const auto model = io::load(model_path);
    if (model.dim() != 2) throw DataError("grid export needs a V = 2 model, this one has V = " + std::to_string(model.dim()));
    if (bounds.size() != 4 || !(bounds[0] < bounds[1]) || !(bounds[2] < bounds[3])) {
        throw ParameterError("--bounds expects x1min,x1max,x2min,x2max with min < max");
    }
    if (resolution < 2) throw ParameterError("--resolution must be at least 2");
    geometry::check_p0(p0);
    const FittedModel& geo_model = model.primary();
    geometry::Kind gk = geometry::default_kind(geo_model);
    if (kind == "sum") gk = geometry::Kind::kSumViolations;
    if (kind == "stack") gk = geometry::Kind::kStackSatisfied;
    if (kind == "ss") gk = geometry::Kind::kSumStackSatisfied;

    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw DataError("cannot write '" + out_path + "'");
    }
    std::ostream& os = out_path.empty() ? std::cout : file;
    os << "x1,x2,prob,geometry_count\n" << std::setprecision(10);
    const auto& sz = model.standardization();
    Eigen::VectorXd x(3);
    for (int a = 0; a < resolution; ++a) {
        const double x1 = bounds[0] + (bounds[1] - bounds[0]) * a / (resolution - 1);
        for (int b = 0; b < resolution; ++b) {
            const double x2 = bounds[2] + (bounds[3] - bounds[2]) * b / (resolution - 1);
            x << 1.0, x1, x2;
            if (sz) {
                x(1) = (x1 - sz->mean[0]) / sz->stddev[0];
                x(2) = (x2 - sz->mean[1]) / sz->stddev[1];
            }
            os << x1 << ',' << x2 << ',' << model.prob(x) << ',' << geometry::evaluate(gk, x, geo_model, p0) << '\n';
        }
    }
    return 0;
}

// ---- diag ----

int cmd_diag(const std::string& suite, std::uint64_t seed) {
    std::vector<diag::Report> reports;
    if (suite == "pg" || suite == "all") reports.push_back(diag::pg_suite(seed));
    if (suite == "crt" || suite == "all") reports.push_back(diag::crt_suite(seed));
    if (suite == "trpois" || suite == "all") reports.push_back(diag::trpois_suite(seed));
    if (suite == "duality" || suite == "all") reports.push_back(diag::duality_suite(seed));
    bool pass = true;
    for (const auto& r : reports) {
        std::cout << r.text();
        pass = pass && r.pass;
    }
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Softplus regression: Bayesian sum-stack-softplus classifiers trained by Gibbs sampling"};
    app.require_subcommand(1);

    std::string synth_kind, synth_out;
    std::uint64_t synth_seed = 1;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic 2-D dataset (features.csv and labels.csv)");
    synth->add_option("kind", synth_kind, "circle, xor or doublemoon")->required();
    synth->add_option("--seed", synth_seed, "Random seed");
    synth->add_option("--out", synth_out, "Output directory")->required();

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "Fit a model by Gibbs sampling and write a model file");
    add_data_flags(train, tf.data, false);
    train->add_option("--variant", tf.variant, "softplus, sum, stack, ss or logistic")
        ->check(CLI::IsMember({"softplus", "sum", "stack", "ss", "logistic"}));
    auto* depth_opt = train->add_option("--T", tf.depth, "Number of stacked layers");
    auto* kmax_opt = train->add_option("--Kmax", tf.k_max, "Gamma-process truncation (number of experts)");
    train->add_option("--iters", tf.iters, "Gibbs iterations");
    train->add_option("--seed", tf.seed, "Random seed");
    train->add_option("--orientation", tf.orientation, "asis, flipped or both (fused)")->check(CLI::IsMember({"asis", "flipped", "both"}));
    train->add_option("--out", tf.out, "Model file to write")->required();
    train->add_option("--trace", tf.trace, "Per-iteration trace CSV");
    train->add_option("--workers", tf.workers, "Threads for per-expert updates; 1 is bit-reproducible")->check(CLI::PositiveNumber);
    train->add_option("--burn-frac", tf.burn_frac, "Fraction of iterations discarded before the ML snapshot");
    train->add_option("--pg-truncation", tf.pg_truncation, "Gamma terms per Polya-Gamma draw");
    train->add_option("--gamma0-init", tf.gamma0_init, "Initial gamma0");

    std::string model_path, out_path;
    DataFlags pf;
    std::optional<double> predict_p0;
    auto* predict = app.add_subcommand("predict", "Write one predictive probability per row");
    predict->add_option("--model", model_path, "Model file")->required();
    add_data_flags(predict, pf, true);
    predict->add_option("--out", out_path, "Output file (default stdout)");
    predict->add_option("--p0", predict_p0, "Also write hard labels at this threshold");

    DataFlags ef;
    double eval_p0 = 0.5;
    auto* eval = app.add_subcommand("eval", "Print error rate, confusion counts and mean predictive log-likelihood");
    eval->add_option("--model", model_path, "Model file")->required();
    add_data_flags(eval, ef, true);
    eval->add_option("--p0", eval_p0, "Decision threshold");

    std::vector<double> bounds{-4.0, 4.0, -4.0, 4.0};
    int resolution = 100;
    double grid_p0 = 0.5;
    std::string geometry_kind = "auto";
    auto* grid = app.add_subcommand("grid", "Export probabilities and geometry counts over a 2-D grid");
    grid->add_option("--model", model_path, "Model file")->required();
    grid->add_option("--bounds", bounds, "x1min,x1max,x2min,x2max")->delimiter(',')->expected(4);
    grid->add_option("--resolution", resolution, "Points per axis");
    grid->add_option("--p0", grid_p0, "Probability threshold for the geometry counts");
    grid->add_option("--geometry", geometry_kind, "auto, sum, stack or ss")->check(CLI::IsMember({"auto", "sum", "stack", "ss"}));
    grid->add_option("--out", out_path, "Output file (default stdout)");

    std::string suite;
    std::uint64_t diag_seed = 2024;
    auto* dg = app.add_subcommand("diag", "Run sampler self-tests; exit 0 iff all pass");
    dg->add_option("suite", suite, "pg, crt, trpois, duality or all")->required()->check(CLI::IsMember({"pg", "crt", "trpois", "duality", "all"}));
    dg->add_option("--seed", diag_seed, "Random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::kDataError);
    }

    try {
        if (*synth) return cmd_synth(synth_kind, synth_seed, synth_out);
        if (*train) return cmd_train(tf, depth_opt->count() > 0, kmax_opt->count() > 0);
        if (*predict) return cmd_predict(model_path, pf, out_path, predict_p0);
        if (*eval) return cmd_eval(model_path, ef, eval_p0);
        if (*grid) return cmd_grid(model_path, bounds, resolution, grid_p0, geometry_kind, out_path);
        if (*dg) return cmd_diag(suite, diag_seed);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::kDataError);
    }
    return 0;
}
