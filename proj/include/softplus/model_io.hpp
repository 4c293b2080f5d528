#pragma once

// Versioned JSON model files holding one FittedModel or a fused pair.
//
//   {
//     "format": "softplus-model", "version": 1, "kind": "single" | "fused",
//     "trace_path": "..." (optional),
//     "models": [ { "variant", "T", "K_active", "orientation", "log_lik",
//                   "experts": [ { "r", "beta": [[...] per layer t = 2..T+1] } ],
//                   "standardization": { "mean", "std" } | null,
//                   "hyperparams": { ... }, "meta": { "seed", "n_iter", "K_max", "provenance" } } ]
//   }
//
// Doubles are written in shortest round-trip form, so a reloaded model
// predicts bit-identically.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>

#include <json.hpp>

#include "softplus/error.hpp"
#include "softplus/model.hpp"

namespace softplus::io {

inline constexpr int kModelFileVersion = 1;
inline constexpr const char* kModelFormat = "softplus-model";

using json = nlohmann::json;

struct ModelFile {
    std::variant<FittedModel, FusedModel> content;
    std::optional<std::string> trace_path;

    bool is_fused() const { return std::holds_alternative<FusedModel>(content); }
    const FittedModel& single() const { return std::get<FittedModel>(content); }
    const FusedModel& fused() const { return std::get<FusedModel>(content); }

    /// Predictive probability: fused rule for a pair, 1 - e^{-lambda} otherwise.
    double prob(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        return is_fused() ? fused_prob(x, fused()) : predict_prob(x, single());
    }
    const FittedModel& primary() const { return is_fused() ? fused().model_pos : single(); }
    const std::optional<Standardization>& standardization() const { return primary().standardization; }
    Eigen::Index dim() const { return primary().dim(); }
};

namespace detail {

inline json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a.at(i).get<double>();
    return v;
}

inline json hyper_to_json(const HyperParams& h) {
    return json{{"K_max", h.k_max},       {"T", h.depth},           {"a0", h.a0},
                {"b0", h.b0},             {"e0", h.e0},             {"f0", h.f0},
                {"a_t", h.a_t},           {"b_t", h.b_t},           {"n_iter", h.n_iter},
                {"burn_frac", h.burn_frac}, {"prune_iters", h.prune_iters}, {"pg_truncation", h.pg_truncation},
                {"eps_q", h.eps_q},       {"alpha_floor", h.alpha_floor}, {"gamma0_init", h.gamma0_init},
                {"c0_init", h.c0_init},   {"seed", h.seed}};
}

inline HyperParams hyper_from_json(const json& j) {
    HyperParams h;
    h.k_max = j.at("K_max").get<int>();
    h.depth = j.at("T").get<int>();
    h.a0 = j.at("a0").get<double>();
    h.b0 = j.at("b0").get<double>();
    h.e0 = j.at("e0").get<double>();
    h.f0 = j.at("f0").get<double>();
    h.a_t = j.at("a_t").get<double>();
    h.b_t = j.at("b_t").get<double>();
    h.n_iter = j.at("n_iter").get<int>();
    h.burn_frac = j.at("burn_frac").get<double>();
    h.prune_iters = j.at("prune_iters").get<std::set<int>>();
    h.pg_truncation = j.at("pg_truncation").get<int>();
    h.eps_q = j.at("eps_q").get<double>();
    h.alpha_floor = j.at("alpha_floor").get<double>();
    h.gamma0_init = j.at("gamma0_init").get<double>();
    h.c0_init = j.at("c0_init").get<double>();
    h.seed = j.at("seed").get<std::uint64_t>();
    return h;
}

inline json model_to_json(const FittedModel& m) {
    json experts = json::array();
    for (const auto& e : m.experts) {
        json betas = json::array();
        for (const auto& b : e.beta) betas.push_back(vec_to_json(b));
        experts.push_back({{"r", e.r}, {"beta", betas}});
    }
    json stdz = nullptr;
    if (m.standardization) stdz = {{"mean", m.standardization->mean}, {"std", m.standardization->stddev}};
    return json{{"variant", std::string(to_string(m.variant))},
                {"T", m.depth},
                {"K_active", m.experts.size()},
                {"orientation", std::string(to_string(m.orientation))},
                {"log_lik", m.log_lik},
                {"experts", experts},
                {"standardization", stdz},
                {"hyperparams", hyper_to_json(m.hyper)},
                {"meta", {{"seed", m.meta.seed}, {"n_iter", m.meta.n_iter}, {"K_max", m.meta.k_max}, {"provenance", m.meta.provenance}}}};
}

inline FittedModel model_from_json(const json& j) {
    FittedModel m;
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.depth = j.at("T").get<int>();
    const auto o = j.at("orientation").get<std::string>();
    if (o != "asis" && o != "flipped") throw DataError("model file: unknown orientation '" + o + "'");
    m.orientation = o == "asis" ? Orientation::kAsIs : Orientation::kFlipped;
    m.log_lik = j.at("log_lik").get<double>();
    for (const auto& e : j.at("experts")) {
        Expert ex;
        ex.r = e.at("r").get<double>();
        for (const auto& b : e.at("beta")) ex.beta.push_back(vec_from_json(b));
        m.experts.push_back(std::move(ex));
    }
    if (j.at("K_active").get<std::size_t>() != m.experts.size()) throw DataError("model file: K_active does not match experts");
    if (const auto& s = j.at("standardization"); !s.is_null()) {
        m.standardization = Standardization{s.at("mean").get<std::vector<double>>(), s.at("std").get<std::vector<double>>()};
    }
    m.hyper = hyper_from_json(j.at("hyperparams"));
    const auto& meta = j.at("meta");
    m.meta.seed = meta.at("seed").get<std::uint64_t>();
    m.meta.n_iter = meta.at("n_iter").get<int>();
    m.meta.k_max = meta.at("K_max").get<int>();
    m.meta.provenance = meta.at("provenance").get<std::string>();
    m.validate();
    return m;
}

}  // namespace detail

inline std::string serialize(const ModelFile& f) {
    json j{{"format", kModelFormat}, {"version", kModelFileVersion}};
    j["kind"] = f.is_fused() ? "fused" : "single";
    if (f.trace_path) j["trace_path"] = *f.trace_path;
    json models = json::array();
    if (f.is_fused()) {
        models.push_back(detail::model_to_json(f.fused().model_pos));
        models.push_back(detail::model_to_json(f.fused().model_neg));
    } else {
        models.push_back(detail::model_to_json(f.single()));
    }
    j["models"] = models;
    return j.dump(2) + "\n";
}

/// Parse a model document; a missing or different version is refused.
inline ModelFile deserialize(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("model file: not valid JSON: ") + e.what());
    }
    try {
        if (!j.contains("format") || j.at("format") != kModelFormat) throw DataError("model file: not a softplus model document");
        if (!j.contains("version") || !j.at("version").is_number_integer()) throw VersionError("model file: missing version field");
        const int version = j.at("version").get<int>();
        if (version != kModelFileVersion) {
            throw VersionError("model file: version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kModelFileVersion) + ")");
        }
        const auto kind = j.at("kind").get<std::string>();
        const auto& models = j.at("models");
        ModelFile f{FittedModel{}, std::nullopt};
        if (j.contains("trace_path")) f.trace_path = j.at("trace_path").get<std::string>();
        if (kind == "single") {
            if (models.size() != 1) throw DataError("model file: single model must hold exactly one model");
            f.content = detail::model_from_json(models.at(0));
        } else if (kind == "fused") {
            if (models.size() != 2) throw DataError("model file: fused model must hold exactly two models");
            FusedModel fm{detail::model_from_json(models.at(0)), detail::model_from_json(models.at(1))};
            fm.validate();
            f.content = std::move(fm);
        } else {
            throw DataError("model file: unknown kind '" + kind + "'");
        }
        return f;
    } catch (const json::exception& e) {
        throw DataError(std::string("model file: ") + e.what());
    }
}

inline void save(const ModelFile& f, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file '" + path + "'");
    out << serialize(f);
    if (!out) throw DataError("write failed for model file '" + path + "'");
}

inline ModelFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

}  // namespace softplus::io
