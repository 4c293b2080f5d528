#pragma once

// Dataset ingestion (sparse "label idx:val" and dense delimited text),
// standardization, predefined train/test partitions and synthetic generators.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "softplus/error.hpp"
#include "softplus/model.hpp"
#include "softplus/rng.hpp"

namespace softplus::data {

/// Features without the bias column plus binary labels.
struct RawTable {
    Eigen::MatrixXd features;  // N x V
    std::vector<int> labels;   // {0, 1}
    std::string source;

    Eigen::Index size() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }
};

/// Row indices (0-based) of one train/test split.
struct PartitionSpec {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    int id = 1;
};

namespace detail {

inline std::string where(const std::string& path, std::size_t line) { return path + ":" + std::to_string(line); }

inline std::optional<double> parse_double(std::string_view tok) {
    if (tok.empty()) return std::nullopt;
    if (tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) return std::nullopt;
    return v;
}

inline int map_label(double v, const std::string& ctx) {
    if (v == 1.0) return 1;
    if (v == 0.0 || v == -1.0) return 0;
    throw DataError(ctx + ": label must be one of {-1, 0, +1}, got " + std::to_string(v));
}

// Comma/semicolon separated when either appears on the line, otherwise
// whitespace separated. Empty comma fields are kept so they fail to parse.
inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    auto trim = [](std::string_view f) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t' || f.front() == '\r')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
        return f;
    };
    if (line.find_first_of(",;") != std::string_view::npos) {
        std::size_t start = 0;
        for (;;) {
            const auto pos = line.find_first_of(",;", start);
            out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
            if (pos == std::string_view::npos) break;
            start = pos + 1;
        }
        return out;
    }
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline bool blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

inline std::ifstream open(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return in;
}

}  // namespace detail

/// Resolve a relative path against $SOFTPLUS_DATA_DIR when it does not exist
/// relative to the working directory.
inline std::string resolve_data_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (path.empty() || fs::path(path).is_absolute() || fs::exists(path)) return path;
    if (const char* dir = std::getenv("SOFTPLUS_DATA_DIR"); dir != nullptr && *dir != '\0') {
        const fs::path candidate = fs::path(dir) / path;
        if (fs::exists(candidate)) return candidate.string();
    }
    return path;
}

/// Parse "label idx:val ..." lines with 1-based indices. Missing entries are
/// zero. V is the largest index seen, or min_dim if that is larger.
inline RawTable parse_sparse(const std::string& path, std::optional<int> min_dim = std::nullopt) {
    auto in = detail::open(path);
    std::vector<std::vector<std::pair<int, double>>> rows;
    std::vector<int> labels;
    int max_index = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        const auto lab = detail::parse_double(tok);
        if (!lab) throw DataError(detail::where(path, lineno) + ": malformed label '" + tok + "'");
        labels.push_back(detail::map_label(*lab, detail::where(path, lineno)));
        auto& row = rows.emplace_back();
        while (ss >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos) throw DataError(detail::where(path, lineno) + ": expected idx:val, got '" + tok + "'");
            int idx = 0;
            const std::string_view idx_s(tok.data(), colon);
            const auto [p, ec] = std::from_chars(idx_s.data(), idx_s.data() + idx_s.size(), idx);
            const auto val = detail::parse_double(std::string_view(tok).substr(colon + 1));
            if (ec != std::errc() || p != idx_s.data() + idx_s.size() || idx < 1 || !val || !std::isfinite(*val)) {
                throw DataError(detail::where(path, lineno) + ": malformed feature '" + tok + "'");
            }
            row.emplace_back(idx, *val);
            max_index = std::max(max_index, idx);
        }
    }
    const int dim = std::max(max_index, min_dim.value_or(0));
    RawTable t;
    t.source = "sparse:" + path;
    t.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (const auto& [idx, val] : rows[i]) t.features(static_cast<Eigen::Index>(i), idx - 1) = val;
    }
    t.labels = std::move(labels);
    return t;
}

/// Inverse of parse_sparse up to zero entries; values are written with 17
/// significant digits so they parse back exactly.
inline void write_sparse(const RawTable& t, std::ostream& os) {
    const auto old = os.precision(17);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        os << (t.labels[static_cast<std::size_t>(i)] == 1 ? "+1" : "-1");
        for (Eigen::Index v = 0; v < t.dim(); ++v) {
            if (t.features(i, v) != 0.0) os << ' ' << (v + 1) << ':' << t.features(i, v);
        }
        os << '\n';
    }
    os.precision(old);
}

enum class LabelColumn { kLast, kFirst, kNone };

struct DenseOptions {
    LabelColumn label_column = LabelColumn::kLast;
    std::optional<std::string> labels_path;  // separate label file, one per line
};

namespace detail {

inline std::vector<std::vector<double>> read_numeric_rows(const std::string& path) {
    auto in = open(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line) || line.front() == '#') continue;
        const auto fields = split_fields(line);
        std::vector<double> row;
        row.reserve(fields.size());
        for (auto f : fields) {
            const auto v = parse_double(f);
            if (!v) throw DataError(where(path, lineno) + ": not a number '" + std::string(f) + "'");
            if (!std::isfinite(*v)) throw DataError(where(path, lineno) + ": non-finite value");
            row.push_back(*v);
        }
        if (rows.empty()) {
            width = row.size();
        } else if (row.size() != width) {
            throw DataError(where(path, lineno) + ": expected " + std::to_string(width) + " fields, found " +
                            std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

/// Parse comma- or whitespace-delimited numeric rows. Labels come from the
/// first or last column, or from a separate file.
inline RawTable parse_dense(const std::string& path, const DenseOptions& opts = {}) {
    const auto rows = detail::read_numeric_rows(path);
    RawTable t;
    t.source = "dense:" + path;
    if (rows.empty()) throw DataError(path + ": no data rows");
    const auto width = static_cast<Eigen::Index>(rows.front().size());
    if (opts.labels_path) {
        const auto lab_rows = detail::read_numeric_rows(*opts.labels_path);
        if (lab_rows.size() != rows.size()) {
            throw DataError(*opts.labels_path + ": " + std::to_string(lab_rows.size()) + " labels for " +
                            std::to_string(rows.size()) + " rows");
        }
        t.features.resize(static_cast<Eigen::Index>(rows.size()), width);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (lab_rows[i].size() != 1) throw DataError(detail::where(*opts.labels_path, i + 1) + ": expected one label");
            t.labels.push_back(detail::map_label(lab_rows[i][0], detail::where(*opts.labels_path, i + 1)));
            for (Eigen::Index v = 0; v < width; ++v) t.features(static_cast<Eigen::Index>(i), v) = rows[i][static_cast<std::size_t>(v)];
        }
        return t;
    }
    if (opts.label_column == LabelColumn::kNone) {
        throw DataError(path + ": no label column and no label file given");
    }
    if (width < 2) throw DataError(path + ": need at least one feature and one label column");
    const Eigen::Index v_count = width - 1;
    const Eigen::Index offset = opts.label_column == LabelColumn::kFirst ? 1 : 0;
    const auto label_at = static_cast<std::size_t>(opts.label_column == LabelColumn::kFirst ? 0 : width - 1);
    t.features.resize(static_cast<Eigen::Index>(rows.size()), v_count);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        t.labels.push_back(detail::map_label(rows[i][label_at], detail::where(path, i + 1)));
        for (Eigen::Index v = 0; v < v_count; ++v) t.features(static_cast<Eigen::Index>(i), v) = rows[i][static_cast<std::size_t>(v + offset)];
    }
    return t;
}

/// Write features and labels as two comma-separated files.
inline void write_dense(const RawTable& t, const std::string& features_path, const std::string& labels_path) {
    std::ofstream f(features_path);
    std::ofstream l(labels_path);
    if (!f) throw DataError("cannot write '" + features_path + "'");
    if (!l) throw DataError("cannot write '" + labels_path + "'");
    f << std::setprecision(17);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        for (Eigen::Index v = 0; v < t.dim(); ++v) f << (v ? "," : "") << t.features(i, v);
        f << '\n';
        l << t.labels[static_cast<std::size_t>(i)] << '\n';
    }
    if (!f || !l) throw DataError("write failed for '" + features_path + "'");
}

inline RawTable select_rows(const RawTable& t, const std::vector<std::size_t>& idx) {
    RawTable out;
    out.source = t.source;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), t.dim());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= static_cast<std::size_t>(t.size())) throw DataError("row index " + std::to_string(idx[r] + 1) + " out of range");
        out.features.row(static_cast<Eigen::Index>(r)) = t.features.row(static_cast<Eigen::Index>(idx[r]));
        out.labels.push_back(t.labels[idx[r]]);
    }
    return out;
}

inline RawTable apply_standardization(const RawTable& t, const Standardization& p) {
    if (static_cast<Eigen::Index>(p.mean.size()) != t.dim()) throw DataError("standardization has " + std::to_string(p.mean.size()) + " features, data has " + std::to_string(t.dim()));
    RawTable out = t;
    for (Eigen::Index v = 0; v < t.dim(); ++v) {
        out.features.col(v) = (t.features.col(v).array() - p.mean[static_cast<std::size_t>(v)]) / p.stddev[static_cast<std::size_t>(v)];
    }
    return out;
}

inline RawTable invert_standardization(const RawTable& t, const Standardization& p) {
    RawTable out = t;
    for (Eigen::Index v = 0; v < t.dim(); ++v) {
        out.features.col(v) = t.features.col(v).array() * p.stddev[static_cast<std::size_t>(v)] + p.mean[static_cast<std::size_t>(v)];
    }
    return out;
}

/// z-score every feature with mean and population std of the fit rows.
/// Constant features pass through unchanged (recorded as mean 0, std 1).
inline std::pair<RawTable, Standardization> standardize(const RawTable& t, const std::vector<std::size_t>& fit_idx) {
    if (fit_idx.empty()) throw DataError("standardize: no rows to fit on");
    Standardization p;
    const double n = static_cast<double>(fit_idx.size());
    for (Eigen::Index v = 0; v < t.dim(); ++v) {
        double mean = 0.0;
        for (auto i : fit_idx) {
            if (i >= static_cast<std::size_t>(t.size())) throw DataError("standardize: row index out of range");
            mean += t.features(static_cast<Eigen::Index>(i), v);
        }
        mean /= n;
        double var = 0.0;
        for (auto i : fit_idx) {
            const double dlt = t.features(static_cast<Eigen::Index>(i), v) - mean;
            var += dlt * dlt;
        }
        const double sd = std::sqrt(var / n);
        if (sd > 0.0 && std::isfinite(sd)) {
            p.mean.push_back(mean);
            p.stddev.push_back(sd);
        } else {
            p.mean.push_back(0.0);
            p.stddev.push_back(1.0);
        }
    }
    return {apply_standardization(t, p), p};
}

/// Prepend the bias column. The standardization, if any, must already be applied.
inline Dataset to_dataset(const RawTable& t, std::optional<Standardization> applied = std::nullopt) {
    Dataset d;
    d.x.resize(t.size(), t.dim() + 1);
    d.x.col(0).setOnes();
    d.x.rightCols(t.dim()) = t.features;
    d.y = t.labels;
    d.standardization = std::move(applied);
    d.validate();
    return d;
}

/// Complement the labels and toggle the orientation flag.
inline Dataset flip_labels(Dataset d) {
    for (int& v : d.y) v = 1 - v;
    d.orientation = opposite(d.orientation);
    return d;
}

/// Build train/test datasets for one split. With standardize set, the
/// z-scoring is fit on the training rows only and applied to both.
inline std::pair<Dataset, Dataset> load_partition(const RawTable& t, const PartitionSpec& spec, bool standardize_features) {
    const auto n = static_cast<std::size_t>(t.size());
    std::vector<char> seen(n, 0);
    for (auto i : spec.train_idx) {
        if (i >= n) throw DataError("partition " + std::to_string(spec.id) + ": train index " + std::to_string(i + 1) + " out of range");
        if (seen[i]) throw DataError("partition " + std::to_string(spec.id) + ": duplicate train index " + std::to_string(i + 1));
        seen[i] = 1;
    }
    for (auto i : spec.test_idx) {
        if (i >= n) throw DataError("partition " + std::to_string(spec.id) + ": test index " + std::to_string(i + 1) + " out of range");
        if (seen[i]) throw DataError("partition " + std::to_string(spec.id) + ": train and test overlap at row " + std::to_string(i + 1));
        seen[i] = 2;
    }
    RawTable train = select_rows(t, spec.train_idx);
    RawTable test = select_rows(t, spec.test_idx);
    std::optional<Standardization> params;
    if (standardize_features && !spec.train_idx.empty()) {
        auto [scaled, p] = standardize(t, spec.train_idx);
        train = select_rows(scaled, spec.train_idx);
        test = select_rows(scaled, spec.test_idx);
        params = p;
    }
    return {to_dataset(train, params), to_dataset(test, params)};
}

/// Read one line (1-based id) of a partition file. Each line lists 1-based
/// training indices; entries may be written as floats ("6.0000000e+00").
/// Test indices come from the matching line of test_path, or are the
/// complement of the training rows.
inline PartitionSpec read_partition(const std::string& train_path, int id, std::size_t n_rows,
                                    const std::optional<std::string>& test_path = std::nullopt) {
    auto read_line = [&](const std::string& path) {
        const auto rows = detail::read_numeric_rows(path);
        if (id < 1 || static_cast<std::size_t>(id) > rows.size()) {
            throw DataError(path + ": partition " + std::to_string(id) + " not present (file has " + std::to_string(rows.size()) + ")");
        }
        std::vector<std::size_t> idx;
        for (double v : rows[static_cast<std::size_t>(id - 1)]) {
            if (v != std::floor(v) || v < 1.0) throw DataError(path + ": partition indices must be positive integers");
            idx.push_back(static_cast<std::size_t>(v) - 1);
        }
        return idx;
    };
    PartitionSpec spec;
    spec.id = id;
    spec.train_idx = read_line(train_path);
    if (test_path) {
        spec.test_idx = read_line(*test_path);
    } else {
        std::vector<char> in_train(n_rows, 0);
        for (auto i : spec.train_idx) {
            if (i < n_rows) in_train[i] = 1;
        }
        for (std::size_t i = 0; i < n_rows; ++i) {
            if (!in_train[i]) spec.test_idx.push_back(i);
        }
    }
    return spec;
}

/// Benchmark split stored as per-split files in <dir>/<name>/:
/// <name>_{train,test}_{data,labels}_<split>.asc. Returns the stacked table
/// (train rows first) and the matching PartitionSpec.
inline std::optional<std::pair<RawTable, PartitionSpec>> load_benchmark_split(const std::string& dir, const std::string& name, int split) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(dir) / name;
    auto file = [&](const char* part, const char* kind) {
        return (base / (name + "_" + part + "_" + kind + "_" + std::to_string(split) + ".asc")).string();
    };
    const std::string trd = file("train", "data"), trl = file("train", "labels");
    const std::string ted = file("test", "data"), tel = file("test", "labels");
    if (!fs::exists(trd) || !fs::exists(trl) || !fs::exists(ted) || !fs::exists(tel)) return std::nullopt;
    const RawTable train = parse_dense(trd, {LabelColumn::kNone, trl});
    const RawTable test = parse_dense(ted, {LabelColumn::kNone, tel});
    if (train.dim() != test.dim()) throw DataError(name + ": train and test feature counts differ");
    RawTable all;
    all.source = "benchmark:" + name;
    all.features.resize(train.size() + test.size(), train.dim());
    all.features.topRows(train.size()) = train.features;
    all.features.bottomRows(test.size()) = test.features;
    all.labels = train.labels;
    all.labels.insert(all.labels.end(), test.labels.begin(), test.labels.end());
    PartitionSpec spec;
    spec.id = split;
    for (Eigen::Index i = 0; i < train.size(); ++i) spec.train_idx.push_back(static_cast<std::size_t>(i));
    for (Eigen::Index i = 0; i < test.size(); ++i) spec.test_idx.push_back(static_cast<std::size_t>(train.size() + i));
    return std::make_pair(std::move(all), std::move(spec));
}

enum class SyntheticKind { kCircle, kXor, kDoubleMoon };

inline SyntheticKind parse_synthetic_kind(std::string_view s) {
    if (s == "circle") return SyntheticKind::kCircle;
    if (s == "xor") return SyntheticKind::kXor;
    if (s == "doublemoon") return SyntheticKind::kDoubleMoon;
    throw ParameterError("unknown synthetic dataset '" + std::string(s) + "'");
}

/// Class A is labeled 1 and listed first.
///  circle:     150 A points at radius ~ N(2, 0.5^2), uniform angle; 150 B points ~ N(0, 0.5^2 I).
///  xor:        50-point N(., I) blobs; A at (-2, 2), (2, -2); B at (2, 2), (-2, -2).
///  doublemoon: 250 per class on half-annuli of radius 2 and width 1; B is shifted by (2, -0.5).
inline RawTable generate_synthetic(SyntheticKind kind, std::uint64_t seed) {
    dist::RngStream rng(seed, 0x5e7d);
    std::vector<std::array<double, 2>> pts;
    std::vector<int> labels;
    auto add = [&](double a, double b, int y) {
        pts.push_back({a, b});
        labels.push_back(y);
    };
    switch (kind) {
        case SyntheticKind::kCircle:
            for (int i = 0; i < 150; ++i) {
                const double radius = 2.0 + 0.5 * rng.normal();
                const double angle = 2.0 * std::numbers::pi * rng.uniform();
                add(radius * std::cos(angle), radius * std::sin(angle), 1);
            }
            for (int i = 0; i < 150; ++i) {
                const double a = 0.5 * rng.normal();
                add(a, 0.5 * rng.normal(), 0);
            }
            break;
        case SyntheticKind::kXor: {
            const double centers[4][2] = {{-2, 2}, {2, -2}, {2, 2}, {-2, -2}};
            for (int c = 0; c < 4; ++c) {
                for (int i = 0; i < 50; ++i) {
                    const double a = centers[c][0] + rng.normal();
                    add(a, centers[c][1] + rng.normal(), c < 2 ? 1 : 0);
                }
            }
            break;
        }
        case SyntheticKind::kDoubleMoon:
            for (int cls = 0; cls < 2; ++cls) {
                for (int i = 0; i < 250; ++i) {
                    const double radius = 2.0 + (rng.uniform() - 0.5);
                    const double angle = std::numbers::pi * rng.uniform();
                    if (cls == 0) {
                        add(radius * std::cos(angle), radius * std::sin(angle), 1);
                    } else {
                        add(2.0 + radius * std::cos(angle + std::numbers::pi), -0.5 + radius * std::sin(angle + std::numbers::pi), 0);
                    }
                }
            }
            break;
    }
    RawTable t;
    t.features.resize(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        t.features(static_cast<Eigen::Index>(i), 0) = pts[i][0];
        t.features(static_cast<Eigen::Index>(i), 1) = pts[i][1];
    }
    t.labels = std::move(labels);
    t.source = "synthetic";
    return t;
}

}  // namespace softplus::data
