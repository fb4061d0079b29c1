#pragma once

// Command-line workflows: configuration handling, CSV ingestion, JSON/CSV
// report writing, and the estimate / simulate / check / sample commands.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aaa/crossfit.hpp"
#include "aaa/domain.hpp"
#include "aaa/featurize.hpp"
#include "aaa/nuisance.hpp"
#include "aaa/oracle.hpp"
#include "aaa/simulate.hpp"

namespace aaa::cli {

using Json = nlohmann::ordered_json;

enum ExitCode : int { ok = 0, config_error = 2, estimation_error = 3, check_failure = 4 };

/// Invalid configuration or unreadable input; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

inline Json default_config() {
    return Json::parse(R"({
  "data": {"path": "", "outcome": "y", "exposure": "t", "covariates": []},
  "features": {"out_of_range": "clamp", "columns": {}},
  "learner": {"kind": "l1_logit", "epsilon_trim": 0.001, "n_lambda": 100, "lambda_min_ratio": 0.0001,
              "cv_folds": 10, "tol": 1e-7, "max_iter": 100000, "seed": 1, "lambda": null},
  "crossfit": {"K": 10, "seed": 1, "form": "both", "alpha": 0.05, "subpop": "none", "plugin": true},
  "simulate": {"n": 2000, "reps": 300, "K": 5, "alpha": 0.10, "seed": 1,
               "estimators": ["dml_prospective", "dml_retrospective", "plugin_prospective", "plugin_retrospective"],
               "learner": {"cv_folds": 5},
               "dgp": {"age_lo": 25, "age_hi": 65, "age_center": 45, "alpha": [-0.4, 0.015, -0.0002],
                       "beta": [-3.0, 0.7, 0.04, -0.0004], "n_levels": 20, "level_freq": []}},
  "check": {"suite": "all", "n_random_dgps": 1000, "n_directions": 20, "seed": 20230425, "max_support": 8,
            "epsilon": 0.05, "step": 1e-5,
            "tolerances": {"eif": 1e-10, "mean_zero": 1e-12, "orthogonality": 1e-6, "power": 1e-4,
                           "dr": 1e-12, "dr_power": 0.001, "fdr": 1e-10}},
  "output": {"path": "", "format": "json"}
})");
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
inline void merge_into(Json& base, const Json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
            merge_into(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

/// Applies "a.b.c=value". The value is read as JSON when it parses, else as a string.
inline void apply_override(Json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(raw);
    } catch (const Json::parse_error&) {
        value = raw;
    }
    Json* node = &cfg;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key in override path " + path);
        if (!node->is_object()) throw ConfigError("override path " + path + " descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = Json::object();
        start = dot + 1;
    }
}

inline Json load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Json cfg = default_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        Json user;
        try {
            user = Json::parse(in);
        } catch (const Json::parse_error& e) {
            throw ConfigError("config " + path + ": " + e.what());
        }
        merge_into(cfg, user);
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    return cfg;
}

namespace detail {

template <class T>
T get(const Json& j, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string("missing config key ") + key);
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config key ") + key + ": " + e.what());
    }
}

inline Form parse_form(const std::string& s) {
    if (s == "prospective") return Form::prospective;
    if (s == "retrospective") return Form::retrospective;
    throw ConfigError("form must be prospective, retrospective or both, got " + s);
}

}  // namespace detail

inline LearnerConfig parse_learner(const Json& j) {
    LearnerConfig c;
    const auto kind = detail::get<std::string>(j, "kind");
    if (kind == "l1_logit")
        c.kind = LearnerKind::l1_logit;
    else if (kind == "mle_logit")
        c.kind = LearnerKind::mle_logit;
    else if (kind == "oracle")
        c.kind = LearnerKind::oracle;
    else
        throw ConfigError("learner.kind must be l1_logit, mle_logit or oracle, got " + kind);
    c.epsilon_trim = detail::get<double>(j, "epsilon_trim");
    c.n_lambda = detail::get<int>(j, "n_lambda");
    c.lambda_min_ratio = detail::get<double>(j, "lambda_min_ratio");
    c.cv_folds = detail::get<std::size_t>(j, "cv_folds");
    c.tol = detail::get<double>(j, "tol");
    c.max_iter = detail::get<long>(j, "max_iter");
    c.seed = detail::get<std::uint64_t>(j, "seed");
    if (j.contains("lambda") && !j["lambda"].is_null()) c.fixed_lambda = detail::get<double>(j, "lambda");
    if (!(c.epsilon_trim > 0.0 && c.epsilon_trim < 0.5)) throw ConfigError("learner.epsilon_trim must lie in (0, 0.5)");
    if (c.n_lambda < 1) throw ConfigError("learner.n_lambda must be positive");
    if (!(c.lambda_min_ratio > 0.0 && c.lambda_min_ratio < 1.0)) throw ConfigError("learner.lambda_min_ratio must lie in (0, 1)");
    if (c.cv_folds < 2) throw ConfigError("learner.cv_folds must be at least 2");
    if (!(c.tol > 0.0) || c.max_iter < 1) throw ConfigError("learner.tol and learner.max_iter must be positive");
    if (c.fixed_lambda && !(*c.fixed_lambda >= 0.0)) throw ConfigError("learner.lambda must be non-negative");
    return c;
}

/// Column directives by name; unnamed numeric columns pass through and
/// unnamed categorical columns are one-hot encoded with drop_first.
inline FeatureSpec parse_features(const Json& j, const std::vector<std::string>& names,
                                  const std::vector<ColumnKind>& kinds) {
    FeatureSpec spec;
    const auto oor = detail::get<std::string>(j, "out_of_range");
    if (oor == "clamp")
        spec.out_of_range = OutOfRange::clamp;
    else if (oor == "error")
        spec.out_of_range = OutOfRange::error;
    else
        throw ConfigError("features.out_of_range must be clamp or error");
    const Json cols = j.contains("columns") ? j["columns"] : Json::object();
    for (auto it = cols.begin(); it != cols.end(); ++it)
        if (std::find(names.begin(), names.end(), it.key()) == names.end())
            throw ConfigError("features.columns refers to unknown covariate " + it.key());
    for (std::size_t c = 0; c < names.size(); ++c) {
        if (!cols.contains(names[c])) {
            if (kinds[c] == ColumnKind::categorical)
                spec.columns.push_back(OneHotDirective{});
            else
                spec.columns.push_back(Passthrough{});
            continue;
        }
        const Json& d = cols[names[c]];
        const auto type = detail::get<std::string>(d, "type");
        if (type == "passthrough") {
            spec.columns.push_back(Passthrough{});
        } else if (type == "spline") {
            SplineDirective s;
            if (d.contains("degree")) s.degree = detail::get<int>(d, "degree");
            if (d.contains("n_inner_knots")) s.n_inner_knots = detail::get<int>(d, "n_inner_knots");
            if (d.contains("knot_rule")) {
                const auto r = detail::get<std::string>(d, "knot_rule");
                if (r == "quantile")
                    s.knot_rule = KnotRule::quantile;
                else if (r == "uniform")
                    s.knot_rule = KnotRule::uniform;
                else
                    throw ConfigError("knot_rule must be quantile or uniform");
            }
            spec.columns.push_back(s);
        } else if (type == "onehot") {
            OneHotDirective o;
            if (d.contains("drop_first")) o.drop_first = detail::get<bool>(d, "drop_first");
            spec.columns.push_back(o);
        } else {
            throw ConfigError("feature type must be passthrough, spline or onehot, got " + type);
        }
    }
    try {
        spec.validate(kinds);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("features: ") + e.what());
    }
    return spec;
}

inline CrossfitConfig parse_crossfit(const Json& j, unsigned threads) {
    CrossfitConfig c;
    c.K = detail::get<std::size_t>(j, "K");
    c.seed = detail::get<std::uint64_t>(j, "seed");
    c.alpha = detail::get<double>(j, "alpha");
    c.threads = threads;
    if (c.K < 2) throw ConfigError("crossfit.K must be at least 2");
    if (!(c.alpha > 0.0 && c.alpha < 0.5)) throw ConfigError("crossfit.alpha must lie in (0, 0.5)");
    return c;
}

inline LogitDGP parse_dgp(const Json& j) {
    LogitDGP d;
    d.age_lo = detail::get<double>(j, "age_lo");
    d.age_hi = detail::get<double>(j, "age_hi");
    d.age_center = detail::get<double>(j, "age_center");
    const auto a = detail::get<std::vector<double>>(j, "alpha");
    const auto b = detail::get<std::vector<double>>(j, "beta");
    if (a.size() != 3 || b.size() != 4) throw ConfigError("simulate.dgp.alpha needs 3 values and beta needs 4");
    std::copy(a.begin(), a.end(), d.alpha.begin());
    std::copy(b.begin(), b.end(), d.beta.begin());
    d.n_levels = detail::get<std::size_t>(j, "n_levels");
    d.level_freq = detail::get<std::vector<double>>(j, "level_freq");
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("simulate.dgp: ") + e.what());
    }
    return d;
}

inline SweepConfig parse_check(const Json& j, unsigned threads) {
    SweepConfig s;
    s.n_dgps = detail::get<std::size_t>(j, "n_random_dgps");
    s.n_directions = detail::get<std::size_t>(j, "n_directions");
    s.seed = detail::get<std::uint64_t>(j, "seed");
    s.max_support = detail::get<std::size_t>(j, "max_support");
    s.epsilon = detail::get<double>(j, "epsilon");
    s.step = detail::get<double>(j, "step");
    const Json& t = j.at("tolerances");
    s.tol_eif = detail::get<double>(t, "eif");
    s.tol_mean_zero = detail::get<double>(t, "mean_zero");
    s.tol_orthogonality = detail::get<double>(t, "orthogonality");
    s.power_threshold = detail::get<double>(t, "power");
    s.tol_dr = detail::get<double>(t, "dr");
    s.tol_dr_power = detail::get<double>(t, "dr_power");
    s.tol_fdr = detail::get<double>(t, "fdr");
    s.threads = threads;
    if (s.n_dgps < 1 || s.max_support < 1) throw ConfigError("check.n_random_dgps and check.max_support must be positive");
    if (!(s.epsilon > 0.0 && s.epsilon < 0.25)) throw ConfigError("check.epsilon must lie in (0, 0.25)");
    if (!(s.step > 0.0)) throw ConfigError("check.step must be positive");
    return s;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line;  // 1-based source line of each row
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& s, std::size_t lineno) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (quoted) {
            if (c == '"' && i + 1 < s.size() && s[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw ConfigError("line " + std::to_string(lineno) + ": unterminated quoted field");
    out.push_back(std::move(cur));
    return out;
}

inline std::string trim(std::string s) {
    const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

inline std::optional<double> parse_number(const std::string& s) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (b != e && *b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null"; }

}  // namespace detail

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line, lineno);
        for (auto& f : fields) f = detail::trim(std::move(f));
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw ConfigError("line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                              " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line.push_back(lineno);
    }
    if (!have_header) throw ConfigError("CSV input is empty");
    if (t.rows.empty()) throw ConfigError("CSV input has a header but no records");
    return t;
}

struct CovariateDecl {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
};

/// Level-to-code maps of the categorical columns, by column name.
using LevelMaps = std::map<std::string, std::map<std::string, double>>;

/// Builds a Dataset from a parsed table. Outcome and exposure accept
/// 0/1/true/false (case-insensitive). Categorical values that all parse as
/// numbers keep their numeric value as code; otherwise levels are coded by
/// their rank in sorted order.
inline Dataset table_to_dataset(const CsvTable& t, const std::string& outcome, const std::string& exposure,
                                const std::vector<CovariateDecl>& covs, LevelMaps* levels = nullptr) {
    auto col = [&](const std::string& name) {
        const auto it = std::find(t.header.begin(), t.header.end(), name);
        if (it == t.header.end()) throw ConfigError("column " + name + " not found in CSV header");
        return static_cast<std::size_t>(it - t.header.begin());
    };
    auto bit = [&](std::size_t r, std::size_t c, const std::string& role) {
        std::string v = t.rows[r][c];
        std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (v == "1" || v == "true" || v == "1.0") return 1;
        if (v == "0" || v == "false" || v == "0.0") return 0;
        if (detail::is_missing(v))
            throw ConfigError("line " + std::to_string(t.line[r]) + ": missing " + role + " value in column " + t.header[c]);
        throw ConfigError("line " + std::to_string(t.line[r]) + ": " + role + " value '" + t.rows[r][c] +
                          "' in column " + t.header[c] + " is not binary");
    };
    const std::size_t n = t.rows.size();
    const std::size_t yc = col(outcome), tc = col(exposure);
    std::vector<int> y(n), tr(n);
    for (std::size_t r = 0; r < n; ++r) {
        y[r] = bit(r, yc, "outcome");
        tr[r] = bit(r, tc, "exposure");
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(covs.size()));
    std::vector<ColumnKind> kinds;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < covs.size(); ++j) {
        const std::size_t c = col(covs[j].name);
        kinds.push_back(covs[j].kind);
        names.push_back(covs[j].name);
        for (std::size_t r = 0; r < n; ++r)
            if (detail::is_missing(t.rows[r][c]))
                throw ConfigError("line " + std::to_string(t.line[r]) + ": missing value in column " + covs[j].name);
        if (covs[j].kind == ColumnKind::numeric) {
            for (std::size_t r = 0; r < n; ++r) {
                const auto v = detail::parse_number(t.rows[r][c]);
                if (!v)
                    throw ConfigError("line " + std::to_string(t.line[r]) + ": value '" + t.rows[r][c] + "' in column " +
                                      covs[j].name + " is not a finite number");
                x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = *v;
            }
        } else {
            std::map<std::string, double> codes;
            bool numeric = true;
            for (std::size_t r = 0; r < n; ++r) {
                codes.emplace(t.rows[r][c], 0.0);
                numeric = numeric && detail::parse_number(t.rows[r][c]).has_value();
            }
            double rank = 0.0;
            for (auto& [level, code] : codes) code = numeric ? *detail::parse_number(level) : rank++;
            for (std::size_t r = 0; r < n; ++r)
                x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = codes.at(t.rows[r][c]);
            if (levels) (*levels)[covs[j].name] = std::move(codes);
        }
    }
    return Dataset(std::move(y), std::move(tr), std::move(x), std::move(kinds), std::move(names));
}

inline std::vector<CovariateDecl> parse_covariates(const Json& data) {
    std::vector<CovariateDecl> out;
    for (const auto& c : data.at("covariates")) {
        CovariateDecl d;
        if (c.is_string()) {
            d.name = c.get<std::string>();
        } else {
            d.name = detail::get<std::string>(c, "name");
            const auto kind = c.contains("kind") ? detail::get<std::string>(c, "kind") : std::string("numeric");
            if (kind == "categorical")
                d.kind = ColumnKind::categorical;
            else if (kind != "numeric")
                throw ConfigError("covariate kind must be numeric or categorical, got " + kind);
        }
        out.push_back(std::move(d));
    }
    return out;
}

inline Dataset load_dataset(const Json& data) {
    const auto path = detail::get<std::string>(data, "path");
    if (path.empty()) throw ConfigError("data.path is required");
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open data file " + path);
    const CsvTable t = read_csv(in);
    return table_to_dataset(t, detail::get<std::string>(data, "outcome"), detail::get<std::string>(data, "exposure"),
                            parse_covariates(data));
}

// ---------------------------------------------------------------------------
// Serialization

/// Value rounded to 12 significant digits; non-finite values become null.
inline Json num(double v) {
    if (!std::isfinite(v)) return nullptr;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::strtod(buf, nullptr);
}

inline Json num(const std::optional<double>& v) { return v ? num(*v) : Json(nullptr); }

inline Json to_json(const Estimate& e) {
    Json j;
    j["estimator"] = e.form;
    j["form"] = e.form.find("retrospective") != std::string::npos ? "retrospective" : "prospective";
    j["theta_hat"] = num(e.theta_hat);
    j["sigma_hat"] = num(e.sigma_hat);
    j["n"] = e.n;
    j["alpha"] = num(e.alpha);
    j["ci"] = e.ci ? Json::array({num(e.ci->lo), num(e.ci->hi)}) : Json(nullptr);
    j["ci_exp"] = e.ci_exp ? Json::array({num(e.ci_exp->lo), num(e.ci_exp->hi)}) : Json(nullptr);
    j["upper_one_sided"] = num(e.upper_one_sided);
    Json fm = Json::array();
    for (double v : e.fold_means) fm.push_back(num(v));
    j["fold_means"] = fm;
    return j;
}

inline Json to_json(const McRow& r) {
    Json j;
    j["estimator"] = r.label;
    j["mean_bias"] = r.successes ? num(r.mean_bias) : Json(nullptr);
    j["sd"] = num(r.sd);
    j["mean_se"] = num(r.mean_se);
    j["se_sd_ratio"] = num(r.se_sd_ratio);
    j["coverage"] = num(r.coverage);
    j["reps"] = r.reps;
    j["successes"] = r.successes;
    j["failures"] = r.failures;
    j["invalid"] = r.invalid;
    j["errors"] = r.errors;
    return j;
}

inline Json to_json(const LogitDGP& d) {
    Json j;
    j["age_lo"] = num(d.age_lo);
    j["age_hi"] = num(d.age_hi);
    j["age_center"] = num(d.age_center);
    j["alpha"] = Json::array({num(d.alpha[0]), num(d.alpha[1]), num(d.alpha[2])});
    j["beta"] = Json::array({num(d.beta[0]), num(d.beta[1]), num(d.beta[2]), num(d.beta[3])});
    j["n_levels"] = d.n_levels;
    Json f = Json::array();
    for (double v : d.level_freq) f.push_back(num(v));
    j["level_freq"] = f;
    j["synthetic"] = true;
    return j;
}

inline Json to_json(const McReport& r) {
    Json j;
    j["n"] = r.n;
    j["reps"] = r.reps;
    j["K"] = r.K;
    j["alpha"] = num(r.alpha);
    j["seed"] = r.seed;
    j["theta0"] = num(r.theta0);
    j["valid"] = r.valid();
    Json rows = Json::array();
    for (const auto& row : r.rows) rows.push_back(to_json(row));
    j["estimators"] = rows;
    return j;
}

inline Json to_json(const TheoremReport& r) {
    Json j;
    j["check"] = r.check;
    j["max_violation"] = num(r.max_violation);
    j["tolerance"] = num(r.tolerance);
    j["pass"] = r.pass;
    j["instances"] = r.instances;
    Json crit = Json::array();
    for (const auto& c : r.criteria)
        crit.push_back(Json{{"name", c.name},
                            {"value", num(c.value)},
                            {"threshold", num(c.threshold)},
                            {"relation", c.upper_bound ? "<=" : ">"},
                            {"pass", c.pass}});
    j["criteria"] = crit;
    Json det = Json::array();
    for (const auto& d : r.detail)
        det.push_back(Json{{"support_index", d.support_index}, {"violation", num(d.violation)}, {"secondary", num(d.secondary)}});
    j["detail"] = det;
    return j;
}

namespace detail {

inline std::string csv_cell(const Json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

/// One CSV row per element of `rows`, columns = scalar keys of the first row;
/// arrays are flattened into key_0, key_1, ...
inline std::string rows_to_csv(const Json& rows) {
    if (rows.empty()) return "";
    std::vector<std::string> keys;
    std::vector<std::size_t> widths;
    for (auto it = rows[0].begin(); it != rows[0].end(); ++it) {
        if (it.value().is_object()) continue;
        keys.push_back(it.key());
        std::size_t w = 0;
        for (const auto& r : rows)
            if (r.contains(it.key()) && r[it.key()].is_array()) w = std::max(w, r[it.key()].size());
        widths.push_back(w);
    }
    std::ostringstream os;
    bool first = true;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        if (widths[k] == 0) {
            os << (first ? "" : ",") << keys[k];
            first = false;
        }
        for (std::size_t i = 0; i < widths[k]; ++i) {
            os << (first ? "" : ",") << keys[k] << "_" << i;
            first = false;
        }
    }
    os << "\n";
    for (const auto& r : rows) {
        first = true;
        for (std::size_t k = 0; k < keys.size(); ++k) {
            const Json v = r.contains(keys[k]) ? r[keys[k]] : Json(nullptr);
            if (widths[k] == 0) {
                os << (first ? "" : ",") << csv_cell(v);
                first = false;
            }
            for (std::size_t i = 0; i < widths[k]; ++i) {
                os << (first ? "" : ",") << (v.is_array() && i < v.size() ? csv_cell(v[i]) : "");
                first = false;
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace detail

/// Writes `doc` (or its `rows_key` array as CSV) to output.path, or to `out`
/// when no path is configured. Returns true when written to `out`.
inline bool write_output(const Json& output, const Json& doc, const char* rows_key, std::ostream& out) {
    const auto path = detail::get<std::string>(output, "path");
    const auto format = detail::get<std::string>(output, "format");
    std::string text;
    if (format == "json")
        text = doc.dump(2) + "\n";
    else if (format == "csv")
        text = detail::rows_to_csv(doc.at(rows_key));
    else
        throw ConfigError("output.format must be json or csv");
    if (path.empty()) {
        out << text;
        return true;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write output file " + path);
    f << text;
    return false;
}

// ---------------------------------------------------------------------------
// Summaries

inline std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Two-panel summary: theta with its interval, then exp(theta).
inline std::string estimate_table(const std::vector<Estimate>& rows) {
    std::size_t w = 10;
    for (const auto& e : rows) w = std::max(w, e.form.size());
    std::ostringstream os;
    char line[256];
    const double level = rows.empty() ? 95.0 : 100.0 * (1.0 - rows.front().alpha);
    char ci_head[64];
    std::snprintf(ci_head, sizeof ci_head, "%g%% Confidence Interval", level);
    auto interval = [](const std::optional<Interval>& iv) {
        return iv ? "[" + fixed(iv->lo) + ", " + fixed(iv->hi) + "]" : std::string("-");
    };
    os << "Panel A: theta0\n";
    std::snprintf(line, sizeof line, "%-*s  %9s  %10s  %24s  %15s\n", static_cast<int>(w), "Estimator", "Estimate",
                  "Std. Error", ci_head, "One-sided Upper");
    os << line;
    for (const auto& e : rows) {
        const auto se = e.standard_error();
        std::snprintf(line, sizeof line, "%-*s  %9s  %10s  %24s  %15s\n", static_cast<int>(w), e.form.c_str(),
                      fixed(e.theta_hat).c_str(), se ? fixed(*se).c_str() : "-", interval(e.ci).c_str(),
                      e.upper_one_sided ? fixed(*e.upper_one_sided).c_str() : "-");
        os << line;
    }
    os << "\nPanel B: exp(theta0)\n";
    std::snprintf(line, sizeof line, "%-*s  %9s  %24s  %15s\n", static_cast<int>(w), "Estimator", "Estimate", ci_head,
                  "One-sided Upper");
    os << line;
    for (const auto& e : rows) {
        std::snprintf(line, sizeof line, "%-*s  %9s  %24s  %15s\n", static_cast<int>(w), e.form.c_str(),
                      fixed(std::exp(e.theta_hat)).c_str(), interval(e.ci_exp).c_str(),
                      e.upper_one_sided ? fixed(std::exp(*e.upper_one_sided)).c_str() : "-");
        os << line;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Commands

struct Streams {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
};

/// Runs `body`, mapping exceptions to exit codes and printing the message.
template <class Fn>
int guarded(std::ostream& err, Fn&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return config_error;
    } catch (const FoldDegenerate& e) {
        err << "error: " << e.what() << "\n"
            << "hint: reduce crossfit.K so that every training complement contains both strata\n";
        return estimation_error;
    } catch (const ConvergenceError& e) {
        err << "error: " << e.what() << "\n";
        return estimation_error;
    } catch (const Json::exception& e) {
        err << "error: configuration: " << e.what() << "\n";
        return config_error;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return config_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return estimation_error;
    }
}

inline int cmd_estimate(const Json& cfg, unsigned threads, Streams io = {}) {
    return guarded(io.err, [&] {
        const Dataset data = load_dataset(cfg.at("data"));
        const FeatureSpec spec = parse_features(cfg.at("features"), data.names(), data.kinds());
        const LearnerConfig learner = parse_learner(cfg.at("learner"));
        if (learner.kind == LearnerKind::oracle) throw ConfigError("the oracle learner needs a known truth; use simulate");
        const Json& cf = cfg.at("crossfit");
        const CrossfitConfig cc = parse_crossfit(cf, threads);
        if (cc.K > data.size()) throw ConfigError("crossfit.K exceeds the number of records");
        const auto form = detail::get<std::string>(cf, "form");
        std::vector<Form> forms;
        if (form == "both")
            forms = {Form::prospective, Form::retrospective};
        else
            forms = {detail::parse_form(form)};
        const auto subpop = detail::get<std::string>(cf, "subpop");
        const bool plugin = detail::get<bool>(cf, "plugin");

        std::vector<Estimate> rows;
        Json warnings = Json::array();
        for (Form f : forms) {
            const CrossfitScores s = crossfit_scores(data, spec, learner, cc, f);
            rows.push_back(estimate_from_scores(s, cc.alpha, dml_label(f)));
            for (const auto& w : s.warnings) warnings.push_back(std::string(to_string(f)) + " " + w);
        }
        if (plugin)
            for (Form f : forms) rows.push_back(plugin_estimate(data, spec, learner, f, cc.alpha));
        if (subpop != "none") {
            Subpop sp;
            if (subpop == "T1")
                sp = Subpop::T1;
            else if (subpop == "Y1")
                sp = Subpop::Y1;
            else if (subpop == "T0")
                sp = Subpop::T0;
            else if (subpop == "Y0")
                sp = Subpop::Y0;
            else
                throw ConfigError("crossfit.subpop must be none, T1, Y1, T0 or Y0");
            rows.push_back(subpop_average(data, spec, learner, cc, sp, forms.front()));
        }

        Json doc;
        doc["command"] = "estimate";
        doc["n"] = data.size();
        doc["K"] = cc.K;
        doc["seed"] = cc.seed;
        doc["learner"] = to_string(learner.kind);
        Json est = Json::array();
        for (const auto& e : rows) est.push_back(to_json(e));
        doc["estimates"] = est;
        doc["warnings"] = warnings;
        const std::string table = estimate_table(rows);
        const bool to_stdout = write_output(cfg.at("output"), doc, "estimates", io.out);
        (to_stdout ? io.err : io.out) << table;
        return static_cast<int>(ok);
    });
}

/// Estimator specs named in simulate.estimators.
inline std::vector<EstimatorSpec> parse_estimators(const Json& sim, const LogitDGP& dgp, const LearnerConfig& learner) {
    std::vector<EstimatorSpec> all = default_estimators(dgp, learner);
    std::vector<EstimatorSpec> out;
    for (const auto& name : detail::get<std::vector<std::string>>(sim, "estimators")) {
        const auto it = std::find_if(all.begin(), all.end(), [&](const EstimatorSpec& e) { return e.label == name; });
        if (it == all.end()) throw ConfigError("unknown estimator " + name);
        out.push_back(*it);
    }
    if (out.empty()) throw ConfigError("simulate.estimators is empty");
    return out;
}

inline int cmd_simulate(const Json& cfg, unsigned threads, Streams io = {}) {
    return guarded(io.err, [&] {
        const Json& sim = cfg.at("simulate");
        Json lj = cfg.at("learner");
        if (sim.contains("learner")) merge_into(lj, sim["learner"]);
        const LearnerConfig learner = parse_learner(lj);
        const LogitDGP dgp = parse_dgp(sim.at("dgp"));
        McConfig mc;
        const auto reps = detail::get<long long>(sim, "reps");
        const auto n = detail::get<long long>(sim, "n");
        if (reps < 1) throw ConfigError("simulate.reps must be at least 1");
        if (n < 2) throw ConfigError("simulate.n must be at least 2");
        mc.reps = static_cast<std::size_t>(reps);
        mc.n = static_cast<std::size_t>(n);
        mc.K = detail::get<std::size_t>(sim, "K");
        mc.alpha = detail::get<double>(sim, "alpha");
        mc.seed = detail::get<std::uint64_t>(sim, "seed");
        mc.threads = threads;
        if (mc.K < 2 || mc.K > mc.n) throw ConfigError("simulate.K must lie in [2, n]");
        if (!(mc.alpha > 0.0 && mc.alpha < 0.5)) throw ConfigError("simulate.alpha must lie in (0, 0.5)");
        const McReport rep = run_mc(dgp, parse_estimators(sim, dgp, learner), mc);

        Json doc;
        doc["command"] = "simulate";
        doc["dgp"] = to_json(dgp);
        doc["learner"] = to_string(learner.kind);
        const Json body = to_json(rep);
        for (auto it = body.begin(); it != body.end(); ++it) doc[it.key()] = it.value();
        const bool to_stdout = write_output(cfg.at("output"), doc, "estimators", io.out);
        (to_stdout ? io.err : io.out) << format_mc_table(rep);
        if (!rep.valid()) {
            io.err << "error: more than 10% of replications failed for at least one estimator\n";
            return static_cast<int>(estimation_error);
        }
        return static_cast<int>(ok);
    });
}

inline int cmd_check(const Json& cfg, unsigned threads, Streams io = {}) {
    return guarded(io.err, [&] {
        const Json& cj = cfg.at("check");
        const SweepConfig sc = parse_check(cj, threads);
        const auto suite = detail::get<std::string>(cj, "suite");
        const bool all = suite == "all";
        if (!all && suite != "eif" && suite != "mean_zero" && suite != "orthogonality" && suite != "dr")
            throw ConfigError("check.suite must be all, eif, mean_zero, orthogonality or dr");
        std::vector<TheoremReport> reports;
        if (all || suite == "eif") reports.push_back(sweep_eif(sc));
        if (all || suite == "mean_zero") reports.push_back(sweep_mean_zero(sc));
        if (all || suite == "orthogonality") reports.push_back(sweep_orthogonality(sc));
        if (all || suite == "dr") reports.push_back(sweep_double_robustness(sc));

        bool pass = true;
        Json doc;
        doc["command"] = "check";
        doc["suite"] = suite;
        doc["n_random_dgps"] = sc.n_dgps;
        doc["seed"] = sc.seed;
        Json arr = Json::array();
        for (const auto& r : reports) {
            arr.push_back(to_json(r));
            pass = pass && r.pass;
        }
        doc["pass"] = pass;
        doc["reports"] = arr;
        const bool to_stdout = write_output(cfg.at("output"), doc, "reports", io.out);
        std::ostream& summary = to_stdout ? io.err : io.out;
        for (const auto& r : reports) {
            char line[256];
            std::snprintf(line, sizeof line, "%-20s instances=%-6zu max_violation=%.3e tolerance=%.1e %s\n", r.check.c_str(),
                          r.instances, r.max_violation, r.tolerance, r.pass ? "PASS" : "FAIL");
            summary << line;
            for (const auto& c : r.criteria) {
                std::snprintf(line, sizeof line, "  %-44s %.3e %s %.1e %s\n", c.name.c_str(), c.value,
                              c.upper_bound ? "<=" : ">", c.threshold, c.pass ? "ok" : "violated");
                summary << line;
            }
        }
        if (!pass) {
            const auto worst = std::max_element(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
                return (a.pass ? 0.0 : a.max_violation / std::max(a.tolerance, 1e-300)) <
                       (b.pass ? 0.0 : b.max_violation / std::max(b.tolerance, 1e-300));
            });
            io.err << "check failed: worst violation " << worst->max_violation << " in " << worst->check
                   << " (tolerance " << worst->tolerance << ")\n";
            return static_cast<int>(check_failure);
        }
        return static_cast<int>(ok);
    });
}

/// Writes a synthetic CSV (columns y, t, age[, industry]) from the simulate
/// DGP block with the given n and seed.
inline int cmd_sample(const Json& cfg, std::size_t n, std::uint64_t seed, const std::string& path, Streams io = {}) {
    return guarded(io.err, [&] {
        const LogitDGP dgp = parse_dgp(cfg.at("simulate").at("dgp"));
        if (n < 1) throw ConfigError("n must be positive");
        const Dataset d = sample(dgp, n, seed);
        std::ofstream f;
        if (!path.empty()) {
            f.open(path, std::ios::binary);
            if (!f) throw ConfigError("cannot write " + path);
        }
        std::ostream& out = path.empty() ? io.out : f;
        out << "y,t";
        for (const auto& nm : d.names()) out << "," << nm;
        out << "\n";
        char buf[40];
        for (std::size_t i = 0; i < d.size(); ++i) {
            out << d.y()[i] << "," << d.t()[i];
            for (Eigen::Index j = 0; j < d.x().cols(); ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", d.x()(static_cast<Eigen::Index>(i), j));
                out << "," << buf;
            }
            out << "\n";
        }
        return static_cast<int>(ok);
    });
}

}  // namespace aaa::cli
