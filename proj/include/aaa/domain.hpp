#pragma once

// Core types and the closed-form scores for the average adjusted association
// theta0 = E[log OR(X)] of a binary outcome Y and a binary exposure T.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

namespace aaa {

enum class Form { prospective, retrospective };

inline const char* to_string(Form f) { return f == Form::prospective ? "prospective" : "retrospective"; }

enum class ColumnKind { numeric, categorical };

inline double logistic(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

namespace detail {

inline void require_open_unit(double p, const char* what) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error(std::string(what) + " must lie in (0,1), got " + std::to_string(p));
}

inline void require_bit(int b, const char* what) {
    if (b != 0 && b != 1) throw std::invalid_argument(std::string(what) + " must be 0 or 1");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset

/// Estimation sample: binary y and t plus an n x d raw covariate matrix.
/// Categorical columns hold integer level codes.
class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<int> y, std::vector<int> t, Eigen::MatrixXd x, std::vector<ColumnKind> kinds,
            std::vector<std::string> names = {})
        : y_(std::move(y)), t_(std::move(t)), x_(std::move(x)), kinds_(std::move(kinds)), names_(std::move(names)) {
        const auto n = y_.size();
        if (n == 0) throw std::invalid_argument("dataset must contain at least one record");
        if (t_.size() != n || static_cast<std::size_t>(x_.rows()) != n)
            throw std::invalid_argument("y, t and covariate rows must have equal length");
        if (kinds_.size() != static_cast<std::size_t>(x_.cols()))
            throw std::invalid_argument("one column kind is required per covariate column");
        if (names_.empty())
            for (Eigen::Index j = 0; j < x_.cols(); ++j) names_.push_back("x" + std::to_string(j));
        if (names_.size() != kinds_.size()) throw std::invalid_argument("one name is required per covariate column");
        for (std::size_t i = 0; i < n; ++i) {
            if ((y_[i] != 0 && y_[i] != 1) || (t_[i] != 0 && t_[i] != 1))
                throw std::invalid_argument("y and t must be binary (record " + std::to_string(i) + ")");
        }
        if (!x_.allFinite()) throw std::invalid_argument("covariates must be finite");
    }

    std::size_t size() const { return y_.size(); }
    std::size_t n_columns() const { return kinds_.size(); }
    const std::vector<int>& y() const { return y_; }
    const std::vector<int>& t() const { return t_; }
    const Eigen::MatrixXd& x() const { return x_; }
    const std::vector<ColumnKind>& kinds() const { return kinds_; }
    const std::vector<std::string>& names() const { return names_; }

    Dataset subset(std::span<const std::size_t> rows) const {
        std::vector<int> y(rows.size()), t(rows.size());
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), x_.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            y[r] = y_.at(rows[r]);
            t[r] = t_[rows[r]];
            x.row(static_cast<Eigen::Index>(r)) = x_.row(static_cast<Eigen::Index>(rows[r]));
        }
        return Dataset(std::move(y), std::move(t), std::move(x), kinds_, names_);
    }

private:
    std::vector<int> y_, t_;
    Eigen::MatrixXd x_;
    std::vector<ColumnKind> kinds_;
    std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// NuisanceTriple

/// Fitted nuisance values on a set of records.
///  prospective:   f0 = P(Y=1|T=0,X), f1 = P(Y=1|T=1,X), w = P(T=1|X)
///  retrospective: f0 = P(T=1|Y=0,X), f1 = P(T=1|Y=1,X), w = P(Y=1|X)
class NuisanceTriple {
public:
    NuisanceTriple(Form kind, std::vector<double> f0, std::vector<double> f1, std::vector<double> w, double epsilon_trim)
        : kind_(kind), f0_(std::move(f0)), f1_(std::move(f1)), w_(std::move(w)), eps_(epsilon_trim) {
        if (!(eps_ > 0.0 && eps_ < 0.5)) throw std::invalid_argument("epsilon_trim must lie in (0, 0.5)");
        if (f1_.size() != f0_.size() || w_.size() != f0_.size())
            throw std::invalid_argument("nuisance components must have equal length");
        for (const auto* v : {&f0_, &f1_, &w_})
            for (double p : *v)
                if (!(p >= eps_ && p <= 1.0 - eps_))
                    throw std::domain_error("nuisance probability outside [epsilon_trim, 1 - epsilon_trim]");
    }

    Form kind() const { return kind_; }
    std::size_t size() const { return f0_.size(); }
    double epsilon_trim() const { return eps_; }
    const std::vector<double>& f0() const { return f0_; }
    const std::vector<double>& f1() const { return f1_; }
    const std::vector<double>& w() const { return w_; }

private:
    Form kind_;
    std::vector<double> f0_, f1_, w_;
    double eps_;
};

// ---------------------------------------------------------------------------
// Estimate

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct Estimate {
    std::string form;
    double theta_hat = 0.0;
    std::optional<double> sigma_hat;  // per-observation scale; absent for plug-in
    std::size_t n = 0;
    double alpha = 0.05;
    std::optional<Interval> ci;
    std::optional<Interval> ci_exp;
    std::optional<double> upper_one_sided;
    std::vector<double> fold_means;

    std::optional<double> standard_error() const {
        if (!sigma_hat) return std::nullopt;
        return *sigma_hat / std::sqrt(static_cast<double>(n));
    }
};

/// Standard normal quantile.
inline double normal_quantile(double p) {
    static const boost::math::normal_distribution<double> std_normal(0.0, 1.0);
    return boost::math::quantile(std_normal, p);
}

/// Builds an Estimate and its intervals: theta -/+ z_{1-a/2} sigma/sqrt(n) two-sided,
/// theta + z_{1-a} sigma/sqrt(n) one-sided upper.
inline Estimate make_estimate(std::string form, double theta, std::optional<double> sigma, std::size_t n, double alpha,
                              std::vector<double> fold_means = {}) {
    if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5)");
    if (n == 0) throw std::invalid_argument("estimate requires n >= 1");
    Estimate e;
    e.form = std::move(form);
    e.theta_hat = theta;
    e.sigma_hat = sigma;
    e.n = n;
    e.alpha = alpha;
    e.fold_means = std::move(fold_means);
    if (sigma) {
        if (*sigma < 0.0) throw std::invalid_argument("sigma_hat must be non-negative");
        const double se = *sigma / std::sqrt(static_cast<double>(n));
        const double z2 = normal_quantile(1.0 - alpha / 2.0);
        const double z1 = normal_quantile(1.0 - alpha);
        e.ci = Interval{theta - z2 * se, theta + z2 * se};
        e.ci_exp = Interval{std::exp(e.ci->lo), std::exp(e.ci->hi)};
        e.upper_one_sided = theta + z1 * se;
    }
    return e;
}

// ---------------------------------------------------------------------------
// DiscreteDGP

/// Joint 2x2 law P(Y=y, T=t | X=x), stored as cells[2*y + t].
struct JointCells {
    std::array<double, 4> cells{0.25, 0.25, 0.25, 0.25};

    double operator()(int y, int t) const { return cells[static_cast<std::size_t>(2 * y + t)]; }
};

/// Every conditional probability implied by one joint table.
struct Conditionals {
    double p0;   // P(Y=1|T=0)
    double p1;   // P(Y=1|T=1)
    double pt;   // P(T=1)
    double q0;   // P(T=1|Y=0)
    double q1;   // P(T=1|Y=1)
    double py;   // P(Y=1)
    double p11;  // P(Y=1,T=1)
};

inline Conditionals conditionals(const JointCells& c) {
    const double c00 = c(0, 0), c01 = c(0, 1), c10 = c(1, 0), c11 = c(1, 1);
    return Conditionals{c10 / (c10 + c00), c11 / (c11 + c01), c01 + c11, c01 / (c01 + c00),
                        c11 / (c11 + c10), c10 + c11,         c11};
}

/// Joint table from P(Y=1|T=0), P(Y=1|T=1) and P(T=1).
inline JointCells joint_from_prospective(double p0, double p1, double pt) {
    return JointCells{{(1.0 - p0) * (1.0 - pt), (1.0 - p1) * pt, p0 * (1.0 - pt), p1 * pt}};
}

/// Finite-support joint law of (Y, T, X) with scalar covariate points.
class DiscreteDGP {
public:
    DiscreteDGP(std::vector<double> support, std::vector<double> px, std::vector<JointCells> joint, double epsilon)
        : support_(std::move(support)), px_(std::move(px)), joint_(std::move(joint)), eps_(epsilon) {
        if (support_.empty()) throw std::invalid_argument("DGP support must be nonempty");
        if (px_.size() != support_.size() || joint_.size() != support_.size())
            throw std::invalid_argument("support, px and joint must have equal length");
        if (!(eps_ > 0.0 && eps_ < 0.25)) throw std::invalid_argument("DGP epsilon must lie in (0, 0.25)");
        double total = 0.0;
        for (double p : px_) {
            if (!(p > 0.0)) throw std::invalid_argument("px must be strictly positive");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("px must sum to 1");
        for (const auto& jc : joint_) {
            double s = 0.0;
            for (double c : jc.cells) {
                if (!(c >= eps_ && c <= 1.0 - eps_))
                    throw std::invalid_argument("joint cell outside [epsilon, 1 - epsilon]");
                s += c;
            }
            if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("joint cells must sum to 1");
        }
        for (std::size_t i = 0; i < support_.size(); ++i)
            for (std::size_t j = i + 1; j < support_.size(); ++j)
                if (support_[i] == support_[j]) throw std::invalid_argument("support points must be distinct");
    }

    std::size_t size() const { return support_.size(); }
    double epsilon() const { return eps_; }
    double point(std::size_t i) const { return support_[i]; }
    double px(std::size_t i) const { return px_[i]; }
    const JointCells& joint(std::size_t i) const { return joint_[i]; }
    Conditionals conditionals(std::size_t i) const { return aaa::conditionals(joint_[i]); }
    const std::vector<double>& support() const { return support_; }

private:
    std::vector<double> support_;
    std::vector<double> px_;
    std::vector<JointCells> joint_;
    double eps_;
};

// ---------------------------------------------------------------------------
// Closed-form functions

/// log{ p1 (1-p0) / [(1-p1) p0] } with p1 = P(Y=1|T=1,x), p0 = P(Y=1|T=0,x).
inline double log_or_prospective(double p1, double p0) {
    detail::require_open_unit(p1, "p1");
    detail::require_open_unit(p0, "p0");
    return std::log(p1) - std::log1p(-p1) - std::log(p0) + std::log1p(-p0);
}

/// Same cross-product ratio written with q1 = P(T=1|Y=1,x), q0 = P(T=1|Y=0,x).
inline double log_or_retrospective(double q1, double q0) {
    detail::require_open_unit(q1, "q1");
    detail::require_open_unit(q0, "q0");
    return std::log(q1) - std::log1p(-q1) - std::log(q0) + std::log1p(-q0);
}

/// Uncentered prospective score: subtract theta to obtain the influence function.
inline double psi_prospective(int y, int t, double p0, double p1, double w) {
    detail::require_bit(y, "y");
    detail::require_bit(t, "t");
    detail::require_open_unit(w, "w");
    const double lor = log_or_prospective(p1, p0);
    return lor + t * (y - p1) / (w * p1 * (1.0 - p1)) - (1 - t) * (y - p0) / ((1.0 - w) * p0 * (1.0 - p0));
}

/// Uncentered retrospective score; roles of y and t swapped relative to psi_prospective.
inline double psi_retrospective(int t, int y, double q0, double q1, double w) {
    detail::require_bit(y, "y");
    detail::require_bit(t, "t");
    detail::require_open_unit(w, "w");
    const double lor = log_or_retrospective(q1, q0);
    return lor + y * (t - q1) / (w * q1 * (1.0 - q1)) - (1 - y) * (t - q0) / ((1.0 - w) * q0 * (1.0 - q0));
}

/// m = {y - L(phi_p)} {t - L(phi_r)} exp(-theta t y), L the logistic link.
inline double dr_moment(double phi_p, double phi_r, double theta, int y, int t) {
    detail::require_bit(y, "y");
    detail::require_bit(t, "t");
    if (!std::isfinite(phi_p) || !std::isfinite(phi_r) || !std::isfinite(theta))
        throw std::domain_error("dr_moment arguments must be finite");
    return (y - logistic(phi_p)) * (t - logistic(phi_r)) * std::exp(-theta * t * y);
}

/// Efficient score of the doubly robust moment at the truth:
/// theta0(x) - theta_bar + m(y,t) / [P(Y=1,T=1|x) m(1,1)].
inline double dr_efficient_score(int y, int t, double phi_p0, double phi_r0, double theta0x, double pyt11,
                                 double theta_bar) {
    detail::require_open_unit(pyt11, "P(Y=1,T=1|x)");
    const double denom = dr_moment(phi_p0, phi_r0, theta0x, 1, 1);
    if (denom == 0.0 || !std::isfinite(denom))
        throw std::domain_error("degenerate doubly robust denominator: bounded-probability condition violated");
    return theta0x - theta_bar + dr_moment(phi_p0, phi_r0, theta0x, y, t) / (pyt11 * denom);
}

}  // namespace aaa
