#pragma once

// Synthetic logit data-generating process and a Monte Carlo driver comparing
// DML and plug-in estimators.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aaa/crossfit.hpp"
#include "aaa/domain.hpp"
#include "aaa/featurize.hpp"
#include "aaa/nuisance.hpp"
#include "aaa/parallel.hpp"
#include "aaa/rng.hpp"

namespace aaa {

/// Age ~ U[age_lo, age_hi]; optional categorical column with no effect on
/// (Y, T). Both linear indices use centered age a = age - age_center:
///   P(T=1|X)   = G(alpha0 + alpha1 a + alpha2 a^2)
///   P(Y=1|T,X) = G(beta0 + beta1 T + beta2 a + beta3 a^2)
/// so log OR(X) = beta1 for every X.
struct LogitDGP {
    double age_lo = 25.0;
    double age_hi = 65.0;
    double age_center = 45.0;
    std::array<double, 3> alpha{-0.4, 0.015, -0.0002};
    std::array<double, 4> beta{-3.0, 0.7, 0.04, -0.0004};
    std::size_t n_levels = 20;          // 0 disables the categorical column
    std::vector<double> level_freq;     // empty: uniform over levels
    double bound = 1e-4;

    double theta0() const { return beta[1]; }

    double p_treat(double age) const {
        const double a = age - age_center;
        return logistic(alpha[0] + alpha[1] * a + alpha[2] * a * a);
    }
    double p_outcome(int t, double age) const {
        const double a = age - age_center;
        return logistic(beta[0] + beta[1] * t + beta[2] * a + beta[3] * a * a);
    }
    JointCells joint(double age) const { return joint_from_prospective(p_outcome(0, age), p_outcome(1, age), p_treat(age)); }

    /// Throws std::invalid_argument unless the covariate law is well formed and
    /// every implied probability on a 2001-point age grid lies in [bound, 1-bound].
    void validate() const {
        if (!(age_lo < age_hi) || !std::isfinite(age_lo) || !std::isfinite(age_hi))
            throw std::invalid_argument("age range must satisfy lo < hi");
        if (!(bound > 0.0 && bound < 0.5)) throw std::invalid_argument("probability bound must lie in (0, 0.5)");
        if (!level_freq.empty()) {
            if (level_freq.size() != n_levels) throw std::invalid_argument("level_freq must have one entry per level");
            double s = 0.0;
            for (double f : level_freq) {
                if (!(f > 0.0)) throw std::invalid_argument("level frequencies must be positive");
                s += f;
            }
            if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("level frequencies must sum to 1");
        }
        for (int g = 0; g <= 2000; ++g) {
            const double age = age_lo + (age_hi - age_lo) * g / 2000.0;
            for (double p : {p_treat(age), p_outcome(0, age), p_outcome(1, age)})
                if (!(p >= bound && p <= 1.0 - bound))
                    throw std::invalid_argument("implied probability " + std::to_string(p) + " at age " +
                                                std::to_string(age) + " violates the overlap bound");
        }
    }

    TruthFn truth() const {
        return [dgp = *this](std::span<const double> row) { return dgp.joint(row[0]); };
    }
};

/// Over-specified design used by every simulated estimator: cubic spline of
/// age plus one-hot dummies for the categorical column.
inline FeatureSpec default_sim_features(const LogitDGP& dgp) {
    FeatureSpec spec;
    spec.columns.push_back(SplineDirective{});
    if (dgp.n_levels > 0) spec.columns.push_back(OneHotDirective{});
    spec.out_of_range = OutOfRange::clamp;
    return spec;
}

/// n i.i.d. records (age, [level]) with T and Y drawn from the logit model.
inline Dataset sample(const LogitDGP& dgp, std::size_t n, std::uint64_t seed) {
    dgp.validate();
    if (n < 1) throw std::invalid_argument("n must be positive");
    Rng rng = make_rng(seed, 0x73696dULL);
    const bool cat = dgp.n_levels > 0;
    std::vector<double> cum;
    if (cat) {
        double acc = 0.0;
        for (std::size_t l = 0; l < dgp.n_levels; ++l) {
            acc += dgp.level_freq.empty() ? 1.0 / static_cast<double>(dgp.n_levels) : dgp.level_freq[l];
            cum.push_back(acc);
        }
    }
    std::vector<int> y(n), t(n);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), cat ? 2 : 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const double age = uniform(rng, dgp.age_lo, dgp.age_hi);
        x(r, 0) = age;
        if (cat) {
            const double u = uniform01(rng) * cum.back();
            const auto it = std::upper_bound(cum.begin(), cum.end(), u);
            x(r, 1) = static_cast<double>(std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), dgp.n_levels - 1));
        }
        t[i] = bernoulli(rng, dgp.p_treat(age)) ? 1 : 0;
        y[i] = bernoulli(rng, dgp.p_outcome(t[i], age)) ? 1 : 0;
    }
    std::vector<ColumnKind> kinds{ColumnKind::numeric};
    std::vector<std::string> names{"age"};
    if (cat) {
        kinds.push_back(ColumnKind::categorical);
        names.push_back("industry");
    }
    return Dataset(std::move(y), std::move(t), std::move(x), std::move(kinds), std::move(names));
}

/// Finite-support approximation: `bins` equal-width age cells, each
/// represented by its midpoint with mass 1/bins.
inline DiscreteDGP discretize(const LogitDGP& dgp, std::size_t bins) {
    if (bins < 1) throw std::invalid_argument("bins must be positive");
    std::vector<double> support(bins), px(bins, 1.0 / static_cast<double>(bins));
    std::vector<JointCells> joint(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        support[b] = dgp.age_lo + (dgp.age_hi - dgp.age_lo) * (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
        joint[b] = dgp.joint(support[b]);
    }
    double eps = 1.0;
    for (const auto& j : joint)
        for (double c : j.cells) eps = std::min(eps, c);
    return DiscreteDGP(std::move(support), std::move(px), std::move(joint), std::min(eps, 0.2));
}

enum class EstimatorKind { dml, plugin };

struct EstimatorSpec {
    std::string label;
    EstimatorKind kind = EstimatorKind::dml;
    Form form = Form::prospective;
    LearnerConfig learner;
    FeatureSpec features;
};

struct McRow {
    std::string label;
    std::size_t reps = 0;
    std::size_t successes = 0;
    std::size_t failures = 0;
    double mean_bias = 0.0;
    std::optional<double> sd;           // needs two or more successes
    std::optional<double> mean_se;      // DML only
    std::optional<double> se_sd_ratio;
    std::optional<double> coverage;     // DML only
    bool invalid = false;               // failures exceed 10% of reps
    std::vector<std::string> errors;    // first few failure messages
};

struct McReport {
    std::size_t n = 0;
    std::size_t reps = 0;
    std::size_t K = 0;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    double theta0 = 0.0;
    std::vector<McRow> rows;

    bool valid() const {
        return std::none_of(rows.begin(), rows.end(), [](const McRow& r) { return r.invalid; });
    }
};

struct McConfig {
    std::size_t n = 2000;
    std::size_t reps = 300;
    std::size_t K = 5;
    double alpha = 0.10;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

namespace detail {

struct McDraw {
    bool ok = false;
    double theta = 0.0;
    std::optional<double> se;
    std::optional<bool> covers;
    std::string error;
};

}  // namespace detail

/// Replication r samples with a seed drawn from stream (seed, r); every
/// estimator sees the same sample. Errors are counted as failures and excluded
/// from the moments.
inline McReport run_mc(const LogitDGP& dgp, const std::vector<EstimatorSpec>& estimators, const McConfig& cfg) {
    dgp.validate();
    if (cfg.reps < 1) throw std::invalid_argument("reps must be at least 1");
    if (cfg.n < 1) throw std::invalid_argument("n must be positive");
    if (estimators.empty()) throw std::invalid_argument("at least one estimator is required");
    const double theta0 = dgp.theta0();
    const std::size_t m = estimators.size();
    std::vector<detail::McDraw> draws(cfg.reps * m);

    parallel_for(cfg.reps, cfg.threads, [&](std::size_t r) {
        Rng rng = make_rng(cfg.seed, r);
        const std::uint64_t sample_seed = rng();
        const std::uint64_t fold_seed = rng();
        const Dataset data = sample(dgp, cfg.n, sample_seed);
        for (std::size_t e = 0; e < m; ++e) {
            auto& d = draws[r * m + e];
            const auto& spec = estimators[e];
            try {
                LearnerConfig learner = spec.learner;
                learner.seed = spec.learner.seed ^ fold_seed;
                if (learner.kind == LearnerKind::oracle) learner.truth = dgp.truth();
                Estimate est;
                if (spec.kind == EstimatorKind::dml) {
                    const CrossfitConfig cc{cfg.K, fold_seed, cfg.alpha, 1};
                    est = dml_estimate(data, spec.features, learner, cc, spec.form);
                } else {
                    est = plugin_estimate(data, spec.features, learner, spec.form, cfg.alpha);
                }
                d.ok = true;
                d.theta = est.theta_hat;
                d.se = est.standard_error();
                if (est.ci) d.covers = est.ci->lo <= theta0 && theta0 <= est.ci->hi;
            } catch (const std::exception& ex) {
                d.error = ex.what();
            }
        }
    });

    McReport rep;
    rep.n = cfg.n;
    rep.reps = cfg.reps;
    rep.K = cfg.K;
    rep.alpha = cfg.alpha;
    rep.seed = cfg.seed;
    rep.theta0 = theta0;
    for (std::size_t e = 0; e < m; ++e) {
        McRow row;
        row.label = estimators[e].label;
        row.reps = cfg.reps;
        std::vector<double> th, se;
        std::size_t covered = 0, with_ci = 0;
        for (std::size_t r = 0; r < cfg.reps; ++r) {
            const auto& d = draws[r * m + e];
            if (!d.ok) {
                ++row.failures;
                if (row.errors.size() < 5) row.errors.push_back("rep " + std::to_string(r) + ": " + d.error);
                continue;
            }
            th.push_back(d.theta);
            if (d.se) se.push_back(*d.se);
            if (d.covers) {
                ++with_ci;
                covered += *d.covers ? 1 : 0;
            }
        }
        row.successes = th.size();
        row.invalid = static_cast<double>(row.failures) > 0.1 * static_cast<double>(cfg.reps);
        if (!th.empty()) {
            double mean = 0.0;
            for (double v : th) mean += v;
            mean /= static_cast<double>(th.size());
            row.mean_bias = mean - theta0;
            if (th.size() >= 2) {
                double ss = 0.0;
                for (double v : th) ss += (v - mean) * (v - mean);
                row.sd = std::sqrt(ss / static_cast<double>(th.size() - 1));
            }
            if (!se.empty()) {
                double s = 0.0;
                for (double v : se) s += v;
                row.mean_se = s / static_cast<double>(se.size());
                if (row.sd && *row.sd > 0.0) row.se_sd_ratio = *row.mean_se / *row.sd;
            }
            if (with_ci > 0) row.coverage = static_cast<double>(covered) / static_cast<double>(with_ci);
        }
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

/// Aligned text table with one line per estimator.
inline std::string format_mc_table(const McReport& rep) {
    auto num = [](std::optional<double> v) {
        if (!v) return std::string("n/a");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", *v);
        return std::string(buf);
    };
    char cov[32];
    std::snprintf(cov, sizeof cov, "Coverage (%g%%)", 100.0 * (1.0 - rep.alpha));
    std::size_t w = 9;
    for (const auto& r : rep.rows) w = std::max(w, r.label.size());
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s  %10s  %18s  %8s  %14s  %8s\n", static_cast<int>(w), "Estimator", "Mean Bias",
                  "Standard Deviation", "SE/SD", cov, "Failures");
    os << line;
    for (const auto& r : rep.rows) {
        std::snprintf(line, sizeof line, "%-*s  %10s  %18s  %8s  %14s  %8zu%s\n", static_cast<int>(w), r.label.c_str(),
                      num(r.mean_bias).c_str(), num(r.sd).c_str(), num(r.se_sd_ratio).c_str(), num(r.coverage).c_str(),
                      r.failures, r.invalid ? "  INVALID" : "");
        os << line;
    }
    std::snprintf(line, sizeof line, "n = %zu, replications = %zu, K = %zu, true theta0 = %g\n", rep.n, rep.reps, rep.K,
                  rep.theta0);
    os << line;
    return os.str();
}

/// The four estimators of the comparison: DML and plug-in, each in both forms,
/// all on the over-specified design.
inline std::vector<EstimatorSpec> default_estimators(const LogitDGP& dgp, const LearnerConfig& learner) {
    const FeatureSpec fs = default_sim_features(dgp);
    std::vector<EstimatorSpec> out;
    for (Form f : {Form::prospective, Form::retrospective}) out.push_back({dml_label(f), EstimatorKind::dml, f, learner, fs});
    for (Form f : {Form::prospective, Form::retrospective})
        out.push_back({plugin_label(f), EstimatorKind::plugin, f, learner, fs});
    return out;
}

}  // namespace aaa
