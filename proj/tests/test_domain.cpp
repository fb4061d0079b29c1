#include <cmath>
#include <stdexcept>

#include <gtest/gtest.h>

#include "aaa/domain.hpp"
#include "support.hpp"

using namespace aaa;

namespace {

constexpr double kLogOr = 0.8109302162163285;  // log 2.25

Dataset tiny() {
    Eigen::MatrixXd x(4, 2);
    x << 1, 0, 2, 1, 3, 0, 4, 1;
    return Dataset({0, 1, 1, 0}, {1, 1, 0, 0}, x, {ColumnKind::numeric, ColumnKind::categorical}, {"age", "ind"});
}

}  // namespace

TEST(Link, LogisticAndLogitInvert) {
    for (double v : {-30.0, -2.5, 0.0, 0.7, 12.0}) EXPECT_NEAR(logit(logistic(v)), v, 1e-9 * (1 + std::abs(v)));
    EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
    EXPECT_GT(logistic(-800.0), -1e-300);
    EXPECT_LE(logistic(800.0), 1.0);
}

TEST(Dataset, ValidatesShapesAndLabels) {
    Eigen::MatrixXd x(2, 1);
    x << 1, 2;
    EXPECT_THROW(Dataset({0, 2}, {0, 1}, x, {ColumnKind::numeric}), std::invalid_argument);
    EXPECT_THROW(Dataset({0}, {0, 1}, x, {ColumnKind::numeric}), std::invalid_argument);
    EXPECT_THROW(Dataset({0, 1}, {0, 1}, x, {}), std::invalid_argument);
    EXPECT_THROW(Dataset({}, {}, Eigen::MatrixXd(0, 1), {ColumnKind::numeric}), std::invalid_argument);
    x(1, 0) = std::nan("");
    EXPECT_THROW(Dataset({0, 1}, {0, 1}, x, {ColumnKind::numeric}), std::invalid_argument);
}

TEST(Dataset, DefaultNamesAndSubset) {
    Eigen::MatrixXd x(2, 2);
    x << 1, 2, 3, 4;
    const Dataset d({0, 1}, {1, 0}, x, {ColumnKind::numeric, ColumnKind::numeric});
    EXPECT_EQ(d.names()[0], "x0");
    EXPECT_EQ(d.names()[1], "x1");

    const Dataset t = tiny();
    const std::vector<std::size_t> rows{3, 1};
    const Dataset s = t.subset(rows);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s.y()[0], 0);
    EXPECT_EQ(s.t()[1], 1);
    EXPECT_EQ(s.x()(0, 0), 4.0);
    EXPECT_EQ(s.names()[1], "ind");
}

TEST(NuisanceTriple, EnforcesTrimRange) {
    EXPECT_NO_THROW(NuisanceTriple(Form::prospective, {0.1}, {0.9}, {0.5}, 1e-3));
    EXPECT_THROW(NuisanceTriple(Form::prospective, {0.0}, {0.9}, {0.5}, 1e-3), std::domain_error);
    EXPECT_THROW(NuisanceTriple(Form::prospective, {0.1}, {0.9999}, {0.5}, 1e-3), std::domain_error);
    EXPECT_THROW(NuisanceTriple(Form::prospective, {0.1, 0.2}, {0.9}, {0.5}, 1e-3), std::invalid_argument);
    EXPECT_THROW(NuisanceTriple(Form::prospective, {0.1}, {0.9}, {0.5}, 0.5), std::invalid_argument);
}

TEST(LogOddsRatio, ReferenceTable) {
    const auto c = conditionals(testkit::reference_cells());
    EXPECT_NEAR(c.p0, 0.4, 1e-15);
    EXPECT_NEAR(c.p1, 0.6, 1e-15);
    EXPECT_NEAR(c.pt, 0.5, 1e-15);
    EXPECT_NEAR(log_or_prospective(c.p1, c.p0), kLogOr, 1e-14);
    EXPECT_NEAR(log_or_retrospective(c.q1, c.q0), kLogOr, 1e-14);
    EXPECT_DOUBLE_EQ(log_or_prospective(0.3, 0.3), 0.0);
}

TEST(LogOddsRatio, RejectsBoundaryProbabilities) {
    EXPECT_THROW(log_or_prospective(1.0, 0.5), std::domain_error);
    EXPECT_THROW(log_or_prospective(0.5, 0.0), std::domain_error);
    EXPECT_THROW(log_or_retrospective(0.5, std::nan("")), std::domain_error);
}

TEST(Scores, FrozenProspectiveValue) {
    EXPECT_NEAR(psi_prospective(1, 1, 0.2, 0.8, 0.5), 5.272588722239782, 1e-12);
}

TEST(Scores, TruthPluggedReferenceCells) {
    const auto c = conditionals(testkit::reference_cells());
    const double expected[2][2] = {{4.144263549549662, -4.189069783783672}, {-4.189069783783672, 4.144263549549662}};
    for (int y : {0, 1})
        for (int t : {0, 1}) {
            EXPECT_NEAR(psi_prospective(y, t, c.p0, c.p1, c.pt), expected[y][t], 1e-12);
            EXPECT_NEAR(psi_retrospective(t, y, c.q0, c.q1, c.py), expected[y][t], 1e-12);
        }
}

TEST(Scores, RejectBadInputs) {
    EXPECT_THROW(psi_prospective(2, 1, 0.2, 0.8, 0.5), std::invalid_argument);
    EXPECT_THROW(psi_prospective(1, 1, 0.2, 0.8, 1.0), std::domain_error);
    EXPECT_THROW(psi_retrospective(1, -1, 0.2, 0.8, 0.5), std::invalid_argument);
    EXPECT_THROW(dr_moment(std::nan(""), 0.0, 0.0, 1, 1), std::domain_error);
}

TEST(Scores, PropertyProspectiveEqualsRetrospectiveAtTruth) {
    Rng rng = make_rng(11, 0);
    for (int rep = 0; rep < 500; ++rep) {
        const auto c = conditionals(testkit::random_cells(rng, 0.01));
        for (int y : {0, 1})
            for (int t : {0, 1})
                ASSERT_NEAR(psi_prospective(y, t, c.p0, c.p1, c.pt), psi_retrospective(t, y, c.q0, c.q1, c.py), 1e-9);
    }
}

TEST(Scores, PropertyConditionalMeanEqualsLogOrForAnyPropensity) {
    Rng rng = make_rng(12, 0);
    for (int rep = 0; rep < 300; ++rep) {
        const JointCells cells = testkit::random_cells(rng);
        const auto c = conditionals(cells);
        const double w = uniform(rng, 0.05, 0.95);
        double mean = 0.0;
        for (int y : {0, 1})
            for (int t : {0, 1}) mean += cells(y, t) * psi_prospective(y, t, c.p0, c.p1, w);
        ASSERT_NEAR(mean, log_or_prospective(c.p1, c.p0), 1e-12);
    }
}

TEST(DoublyRobust, MomentVanishesAtTruthAndScoreMatches) {
    Rng rng = make_rng(13, 0);
    for (int rep = 0; rep < 200; ++rep) {
        const JointCells cells = testkit::random_cells(rng);
        const auto c = conditionals(cells);
        const double th = log_or_prospective(c.p1, c.p0);
        const double phi_p = logit(c.p0), phi_r = logit(c.q0);
        double m_r = 0.0, m_p = 0.0;
        const double other = uniform(rng, -2.0, 2.0);
        for (int y : {0, 1})
            for (int t : {0, 1}) {
                m_r += cells(y, t) * dr_moment(phi_p, other, th, y, t);
                m_p += cells(y, t) * dr_moment(other, phi_r, th, y, t);
                const double fp = psi_prospective(y, t, c.p0, c.p1, c.pt) - 0.3;
                ASSERT_NEAR(dr_efficient_score(y, t, phi_p, phi_r, th, c.p11, 0.3), fp, 1e-10);
            }
        ASSERT_NEAR(m_r, 0.0, 1e-15);
        ASSERT_NEAR(m_p, 0.0, 1e-15);
    }
}

TEST(Estimate, IntervalsAndExponentiation) {
    const Estimate e = make_estimate("dml_prospective", 0.7, 2.0, 400, 0.05, {0.6, 0.8});
    ASSERT_TRUE(e.ci && e.ci_exp && e.upper_one_sided);
    const double se = 0.1;
    EXPECT_NEAR(*e.standard_error(), se, 1e-15);
    EXPECT_NEAR(e.ci->lo, 0.7 - 1.959963984540054 * se, 1e-12);
    EXPECT_NEAR(e.ci->hi, 0.7 + 1.959963984540054 * se, 1e-12);
    EXPECT_NEAR(*e.upper_one_sided, 0.7 + 1.6448536269514722 * se, 1e-12);
    EXPECT_DOUBLE_EQ(e.ci_exp->lo, std::exp(e.ci->lo));
    EXPECT_DOUBLE_EQ(e.ci_exp->hi, std::exp(e.ci->hi));
    EXPECT_EQ(e.fold_means.size(), 2u);
}

TEST(Estimate, PlugInHasNoInterval) {
    const Estimate e = make_estimate("plugin_prospective", 0.7, std::nullopt, 10, 0.05);
    EXPECT_FALSE(e.ci);
    EXPECT_FALSE(e.standard_error());
    EXPECT_THROW(make_estimate("x", 0.0, 1.0, 10, 0.5), std::invalid_argument);
    EXPECT_THROW(make_estimate("x", 0.0, 1.0, 0, 0.05), std::invalid_argument);
    EXPECT_THROW(make_estimate("x", 0.0, -1.0, 5, 0.05), std::invalid_argument);
}

TEST(DiscreteDGP, RejectsInvalidLaws) {
    const JointCells ok = testkit::reference_cells();
    EXPECT_NO_THROW(DiscreteDGP({0.0, 1.0}, {0.5, 0.5}, {ok, ok}, 0.05));
    EXPECT_THROW(DiscreteDGP({0.0, 1.0}, {0.5, 0.6}, {ok, ok}, 0.05), std::invalid_argument);
    EXPECT_THROW(DiscreteDGP({0.0, 0.0}, {0.5, 0.5}, {ok, ok}, 0.05), std::invalid_argument);
    EXPECT_THROW(DiscreteDGP({0.0}, {1.0}, {JointCells{{0.5, 0.3, 0.19, 0.01}}}, 0.05), std::invalid_argument);
    EXPECT_THROW(DiscreteDGP({0.0}, {1.0}, {JointCells{{0.3, 0.3, 0.3, 0.3}}}, 0.05), std::invalid_argument);
    EXPECT_THROW(DiscreteDGP({}, {}, {}, 0.05), std::invalid_argument);
    EXPECT_THROW(DiscreteDGP({0.0}, {1.0}, {ok}, 0.3), std::invalid_argument);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
    Rng a = make_rng(5, 1), b = make_rng(5, 1), c = make_rng(5, 2);
    for (int i = 0; i < 10; ++i) {
        const auto va = a();
        EXPECT_EQ(va, b());
        EXPECT_NE(va, c());
    }
    Rng r = make_rng(9, 0);
    double s = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = uniform01(r);
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
    }
    EXPECT_NEAR(s / 20000.0, 0.5, 0.01);
    for (int i = 0; i < 1000; ++i) ASSERT_LT(uniform_index(r, 7), 7u);
}
