#pragma once

// K-fold cross-fitting and the DML estimators of theta0, with the plug-in and
// subpopulation comparators.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aaa/domain.hpp"
#include "aaa/featurize.hpp"
#include "aaa/folds.hpp"
#include "aaa/nuisance.hpp"
#include "aaa/parallel.hpp"

namespace aaa {

struct CrossfitConfig {
    std::size_t K = 10;
    std::uint64_t seed = 1;
    double alpha = 0.05;
    unsigned threads = 1;
};

/// Per-record cross-fitted quantities for one form.
struct CrossfitScores {
    Form form = Form::prospective;
    FoldPlan plan;
    std::vector<double> psi;     // uncentered scores
    std::vector<double> log_or;  // log OR-hat(X_i) from the fold's nuisance fit
    std::vector<std::string> warnings;
};

namespace detail {

inline void require_strata(const Dataset& data, const FoldPlan& plan, Form form) {
    const auto& s = form == Form::prospective ? data.t() : data.y();
    const char* name = form == Form::prospective ? "T" : "Y";
    for (std::size_t k = 0; k < plan.K; ++k) {
        bool has[2] = {false, false};
        for (std::size_t i = 0; i < data.size(); ++i)
            if (plan.assignment[i] != k) has[s[i]] = true;
        for (int v : {1, 0})
            if (!has[v]) throw FoldDegenerate(std::string(name) + "=" + std::to_string(v), k);
    }
}

inline double score(Form form, int y, int t, const NuisanceTriple& tr, std::size_t r) {
    return form == Form::prospective ? psi_prospective(y, t, tr.f0()[r], tr.f1()[r], tr.w()[r])
                                     : psi_retrospective(t, y, tr.f0()[r], tr.f1()[r], tr.w()[r]);
}

inline double triple_log_or(Form form, const NuisanceTriple& tr, std::size_t r) {
    return form == Form::prospective ? log_or_prospective(tr.f1()[r], tr.f0()[r])
                                     : log_or_retrospective(tr.f1()[r], tr.f0()[r]);
}

}  // namespace detail

/// Cross-fitted scores under an explicit fold plan. For each fold k the
/// featurizer and nuisance triple are fitted on the complement and evaluated
/// on the fold's own records.
inline CrossfitScores crossfit_scores(const Dataset& data, const FeatureSpec& spec, const LearnerConfig& learner,
                                      const FoldPlan& plan, Form form, unsigned threads = 1) {
    if (plan.size() != data.size()) throw std::invalid_argument("fold plan does not match the dataset size");
    detail::require_strata(data, plan, form);
    const auto folds = plan.folds();
    CrossfitScores out;
    out.form = form;
    out.plan = plan;
    out.psi.assign(data.size(), 0.0);
    out.log_or.assign(data.size(), 0.0);
    std::vector<std::vector<std::string>> warnings(plan.K);

    parallel_for(plan.K, threads, [&](std::size_t k) {
        LearnerConfig cfg = learner;
        cfg.seed = learner.seed + 1000003ULL * k;
        FittedNuisance fitted = [&] {
            try {
                return fit_nuisance_triple(data.subset(plan.complement(k)), form, cfg, spec);
            } catch (const FoldDegenerate& e) {
                throw FoldDegenerate(e.stratum(), k);
            }
        }();
        const Dataset held = data.subset(folds[k]);
        const NuisanceTriple tr = fitted.predict(held.x());
        for (std::size_t r = 0; r < folds[k].size(); ++r) {
            const std::size_t i = folds[k][r];
            out.psi[i] = detail::score(form, held.y()[r], held.t()[r], tr, r);
            out.log_or[i] = detail::triple_log_or(form, tr, r);
        }
        for (const auto& w : fitted.warnings()) warnings[k].push_back("fold " + std::to_string(k) + ": " + w);
    });
    for (auto& w : warnings) out.warnings.insert(out.warnings.end(), w.begin(), w.end());
    return out;
}

inline CrossfitScores crossfit_scores(const Dataset& data, const FeatureSpec& spec, const LearnerConfig& learner,
                                      const CrossfitConfig& cfg, Form form) {
    return crossfit_scores(data, spec, learner, make_folds(data.size(), cfg.K, cfg.seed), form, cfg.threads);
}

/// theta-hat as the grand mean of all scores, sigma-hat^2 as their mean
/// squared deviation from theta-hat; per-fold means are recorded.
inline Estimate estimate_from_scores(const CrossfitScores& s, double alpha, std::string label) {
    const std::size_t n = s.psi.size();
    double sum = 0.0;
    for (double v : s.psi) sum += v;
    const double theta = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : s.psi) ss += (v - theta) * (v - theta);
    const double sigma = std::sqrt(ss / static_cast<double>(n));
    std::vector<double> fold_sum(s.plan.K, 0.0), fold_n(s.plan.K, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        fold_sum[s.plan.assignment[i]] += s.psi[i];
        fold_n[s.plan.assignment[i]] += 1.0;
    }
    for (std::size_t k = 0; k < s.plan.K; ++k) fold_sum[k] /= fold_n[k];
    return make_estimate(std::move(label), theta, sigma, n, alpha, std::move(fold_sum));
}

inline std::string dml_label(Form form) { return std::string("dml_") + to_string(form); }
inline std::string plugin_label(Form form) { return std::string("plugin_") + to_string(form); }

/// Cross-fitted DML estimate of theta0 for one form.
inline Estimate dml_estimate(const Dataset& data, const FeatureSpec& spec, const LearnerConfig& learner,
                             const CrossfitConfig& cfg, Form form) {
    return estimate_from_scores(crossfit_scores(data, spec, learner, cfg, form), cfg.alpha, dml_label(form));
}

/// Mean of log OR-hat(X_i) from one full-sample nuisance fit, with no score
/// correction and no cross-fitting. No standard error is available.
inline Estimate plugin_estimate(const Dataset& data, const FeatureSpec& spec, const LearnerConfig& learner, Form form,
                                double alpha = 0.05) {
    const FittedNuisance fitted = fit_nuisance_triple(data, form, learner, spec);
    const NuisanceTriple tr = fitted.predict(data.x());
    double sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) sum += detail::triple_log_or(form, tr, i);
    return make_estimate(plugin_label(form), sum / static_cast<double>(data.size()), std::nullopt, data.size(), alpha);
}

enum class Subpop { T1, Y1, T0, Y0 };

inline const char* to_string(Subpop s) {
    switch (s) {
        case Subpop::T1: return "T1";
        case Subpop::Y1: return "Y1";
        case Subpop::T0: return "T0";
        case Subpop::Y0: return "Y0";
    }
    return "?";
}

inline bool in_subpop(Subpop s, int y, int t) {
    switch (s) {
        case Subpop::T1: return t == 1;
        case Subpop::Y1: return y == 1;
        case Subpop::T0: return t == 0;
        case Subpop::Y0: return y == 0;
    }
    return false;
}

/// Cross-fitted mean of log OR-hat(X_i) over the records of a stratum, e.g.
/// E[log OR(X) | T=1]. Point estimate only: no efficiency claim, no sigma.
inline Estimate subpop_average(const Dataset& data, const FeatureSpec& spec, const LearnerConfig& learner,
                               const CrossfitConfig& cfg, Subpop cond, Form form = Form::prospective) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) count += in_subpop(cond, data.y()[i], data.t()[i]) ? 1 : 0;
    if (count == 0) throw std::invalid_argument(std::string("empty conditioning stratum ") + to_string(cond));
    const CrossfitScores s = crossfit_scores(data, spec, learner, cfg, form);
    double sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (in_subpop(cond, data.y()[i], data.t()[i])) sum += s.log_or[i];
    return make_estimate(std::string("subpop_") + to_string(cond) + "_" + to_string(form),
                         sum / static_cast<double>(count), std::nullopt, count, cfg.alpha);
}

}  // namespace aaa
