#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "aaa/crossfit.hpp"
#include "aaa/oracle.hpp"
#include "aaa/simulate.hpp"

using namespace aaa;

namespace {

DiscreteDGP three_point() {
    return DiscreteDGP({-1.0, 0.0, 2.0}, {0.3, 0.5, 0.2},
                       {JointCells{{0.3, 0.2, 0.2, 0.3}}, JointCells{{0.1, 0.4, 0.2, 0.3}},
                        JointCells{{0.25, 0.25, 0.35, 0.15}}},
                       0.05);
}

LearnerConfig oracle_learner(const DiscreteDGP& dgp) {
    LearnerConfig cfg;
    cfg.kind = LearnerKind::oracle;
    cfg.truth = discrete_truth(dgp);
    return cfg;
}

}  // namespace

TEST(Folds, BalancedPartition) {
    for (std::size_t n : {10u, 11u, 97u, 1000u})
        for (std::size_t K : {2u, 3u, 5u, 10u}) {
            const FoldPlan plan = make_folds(n, K, 3);
            const auto folds = plan.folds();
            std::size_t lo = n, hi = 0, total = 0;
            for (const auto& f : folds) {
                lo = std::min(lo, f.size());
                hi = std::max(hi, f.size());
                total += f.size();
            }
            EXPECT_EQ(total, n);
            EXPECT_LE(hi - lo, 1u);
            for (std::size_t k = 0; k < K; ++k) EXPECT_EQ(plan.complement(k).size() + folds[k].size(), n);
        }
}

TEST(Folds, SeedDeterminesPlan) {
    EXPECT_EQ(make_folds(500, 5, 9).assignment, make_folds(500, 5, 9).assignment);
    EXPECT_NE(make_folds(500, 5, 9).assignment, make_folds(500, 5, 10).assignment);
    EXPECT_THROW(make_folds(10, 1, 1), std::invalid_argument);
    EXPECT_THROW(make_folds(3, 4, 1), std::invalid_argument);
}

TEST(Crossfit, OracleNuisanceIsConsistent) {
    const DiscreteDGP dgp = three_point();
    const Dataset d = sample_discrete(dgp, 20000, 11);
    const double theta0 = exact_theta0(dgp);
    CrossfitConfig cfg;
    cfg.K = 5;
    for (Form f : {Form::prospective, Form::retrospective}) {
        const Estimate e = dml_estimate(d, FeatureSpec::passthrough(1), oracle_learner(dgp), cfg, f);
        const double se = *e.standard_error();
        EXPECT_LT(std::abs(e.theta_hat - theta0), 4.0 * se);
        EXPECT_NEAR(*e.sigma_hat * *e.sigma_hat, exact_v_eff(dgp, f), 0.1 * exact_v_eff(dgp, f));
        ASSERT_TRUE(e.ci.has_value());
        EXPECT_NEAR(e.ci->hi - e.ci->lo, 2.0 * normal_quantile(0.975) * se, 1e-12);
        EXPECT_EQ(e.fold_means.size(), 5u);
    }
}

TEST(Crossfit, FormsAgreeUnderOracleNuisance) {
    const DiscreteDGP dgp = three_point();
    const Dataset d = sample_discrete(dgp, 3000, 12);
    CrossfitConfig cfg;
    cfg.K = 4;
    const auto sp = crossfit_scores(d, FeatureSpec::passthrough(1), oracle_learner(dgp), cfg, Form::prospective);
    const auto sr = crossfit_scores(d, FeatureSpec::passthrough(1), oracle_learner(dgp), cfg, Form::retrospective);
    for (std::size_t i = 0; i < d.size(); ++i) {
        ASSERT_NEAR(sp.psi[i], sr.psi[i], 1e-10);
        ASSERT_NEAR(sp.log_or[i], sr.log_or[i], 1e-10);
    }
}

TEST(Crossfit, GrandMeanAndFoldMeans) {
    CrossfitScores s;
    s.plan = FoldPlan{{0, 1, 0, 1, 1}, 2, 0};
    s.psi = {1.0, 2.0, 3.0, 4.0, 6.0};
    const Estimate e = estimate_from_scores(s, 0.05, "x");
    EXPECT_DOUBLE_EQ(e.theta_hat, 3.2);
    EXPECT_NEAR(*e.sigma_hat, std::sqrt((4.84 + 1.44 + 0.04 + 0.64 + 7.84) / 5.0), 1e-15);
    ASSERT_EQ(e.fold_means.size(), 2u);
    EXPECT_DOUBLE_EQ(e.fold_means[0], 2.0);
    EXPECT_DOUBLE_EQ(e.fold_means[1], 4.0);
}

TEST(Crossfit, FoldRelabelingLeavesEstimateUnchanged) {
    LogitDGP dgp;
    dgp.n_levels = 0;
    const Dataset d = sample(dgp, 600, 13);
    LearnerConfig learner;
    learner.kind = LearnerKind::mle_logit;
    const FeatureSpec spec{{SplineDirective{}}, OutOfRange::clamp};
    const FoldPlan plan = make_folds(d.size(), 4, 5);
    FoldPlan relabeled = plan;
    const std::size_t perm[4] = {2, 0, 3, 1};
    for (auto& a : relabeled.assignment) a = perm[a];
    const auto a = crossfit_scores(d, spec, learner, plan, Form::prospective);
    const auto b = crossfit_scores(d, spec, learner, relabeled, Form::prospective);
    const Estimate ea = estimate_from_scores(a, 0.05, "a"), eb = estimate_from_scores(b, 0.05, "b");
    EXPECT_NEAR(ea.theta_hat, eb.theta_hat, 1e-12);
    EXPECT_NEAR(*ea.sigma_hat, *eb.sigma_hat, 1e-12);
}

// Perturbing the oracle nuisance along a direction moves the DML estimate only
// at second order; the plug-in moves at first order.
TEST(Crossfit, DmlInsensitiveToFirstOrderNuisanceError) {
    const DiscreteDGP dgp = three_point();
    const Dataset d = sample_discrete(dgp, 20000, 14);
    const std::vector<std::array<double, 3>> delta{{0.5, -0.4, 0.3}, {-0.3, 0.6, -0.5}, {0.4, 0.2, 0.6}};
    auto learner_at = [&](double g) {
        LearnerConfig cfg;
        cfg.kind = LearnerKind::oracle;
        cfg.truth = [dgp, delta, g](std::span<const double> row) {
            for (std::size_t i = 0; i < dgp.size(); ++i)
                if (dgp.point(i) == row[0]) {
                    const auto c = dgp.conditionals(i);
                    return joint_from_prospective(c.p0 + g * delta[i][0], c.p1 + g * delta[i][1],
                                                  c.pt + g * delta[i][2]);
                }
            throw std::invalid_argument("off support");
        };
        return cfg;
    };
    CrossfitConfig cfg;
    cfg.K = 2;
    const FeatureSpec spec = FeatureSpec::passthrough(1);
    const double h = 1e-4;
    const auto sp = crossfit_scores(d, spec, learner_at(h), cfg, Form::prospective);
    const auto sm = crossfit_scores(d, spec, learner_at(-h), cfg, Form::prospective);
    // per-record derivative of the score, its sample mean and standard error
    double mean = 0.0, sq = 0.0, plug = 0.0;
    const double n = static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double g = (sp.psi[i] - sm.psi[i]) / (2 * h);
        mean += g / n;
        sq += g * g / n;
        plug += (sp.log_or[i] - sm.log_or[i]) / (2 * h) / n;
    }
    const double se = std::sqrt((sq - mean * mean) / n);
    EXPECT_LT(std::abs(mean), 4.0 * se);
    EXPECT_GT(std::abs(plug), 10.0 * se);
}

TEST(Crossfit, PluginHasNoInterval) {
    const DiscreteDGP dgp = three_point();
    const Dataset d = sample_discrete(dgp, 500, 15);
    const Estimate e = plugin_estimate(d, FeatureSpec::passthrough(1), oracle_learner(dgp), Form::prospective, 0.05);
    EXPECT_FALSE(e.sigma_hat.has_value());
    EXPECT_FALSE(e.ci.has_value());
    EXPECT_EQ(e.form, "plugin_prospective");
    double expect = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double x = d.x()(static_cast<Eigen::Index>(i), 0);
        for (std::size_t k = 0; k < dgp.size(); ++k)
            if (dgp.point(k) == x) expect += support_log_or(dgp, k);
    }
    EXPECT_NEAR(e.theta_hat, expect / 500.0, 1e-12);
}

TEST(Crossfit, SubpopulationAverageMatchesExactValue) {
    const DiscreteDGP dgp = three_point();
    const Dataset d = sample_discrete(dgp, 40000, 16);
    CrossfitConfig cfg;
    cfg.K = 3;
    for (Subpop s : {Subpop::T1, Subpop::T0, Subpop::Y1, Subpop::Y0}) {
        const Estimate e = subpop_average(d, FeatureSpec::passthrough(1), oracle_learner(dgp), cfg, s);
        EXPECT_NEAR(e.theta_hat, exact_subpop_theta(dgp, s), 0.02) << to_string(s);
        EXPECT_FALSE(e.sigma_hat.has_value());
    }
    EXPECT_TRUE(in_subpop(Subpop::T1, 0, 1));
    EXPECT_FALSE(in_subpop(Subpop::Y1, 0, 1));
}

TEST(Crossfit, DegenerateFoldNamesFold) {
    const std::size_t n = 30;
    std::vector<int> y(n), t(n, 0);
    Eigen::MatrixXd x(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 2);
        x(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
    }
    t[7] = 1;
    const Dataset d(y, t, x, {ColumnKind::numeric});
    const FoldPlan plan = make_folds(n, 5, 2);
    LearnerConfig learner;
    learner.kind = LearnerKind::mle_logit;
    try {
        crossfit_scores(d, FeatureSpec::passthrough(1), learner, plan, Form::prospective);
        FAIL();
    } catch (const FoldDegenerate& e) {
        EXPECT_EQ(e.stratum(), "T=1");
        ASSERT_TRUE(e.fold().has_value());
        EXPECT_EQ(*e.fold(), plan.assignment[7]);
        EXPECT_NE(std::string(e.what()).find("fold " + std::to_string(plan.assignment[7])), std::string::npos);
    }
}

TEST(Crossfit, ThreadCountDoesNotChangeResult) {
    LogitDGP dgp;
    dgp.n_levels = 5;
    const Dataset d = sample(dgp, 800, 17);
    LearnerConfig learner;
    learner.cv_folds = 3;
    learner.n_lambda = 30;
    const FeatureSpec spec = default_sim_features(dgp);
    CrossfitConfig c1, c4;
    c1.K = c4.K = 4;
    c4.threads = 4;
    const auto a = crossfit_scores(d, spec, learner, c1, Form::retrospective);
    const auto b = crossfit_scores(d, spec, learner, c4, Form::retrospective);
    EXPECT_EQ(a.psi, b.psi);
    EXPECT_EQ(a.warnings, b.warnings);
}
