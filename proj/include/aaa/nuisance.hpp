#pragma once

// Probability learners for the nuisance functions: l1-penalized logistic
// regression by coordinate descent with a cross-validated penalty, an
// unpenalized IRLS baseline, and a truth-injected oracle for testing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "aaa/domain.hpp"
#include "aaa/featurize.hpp"
#include "aaa/folds.hpp"

namespace aaa {

// ---------------------------------------------------------------------------
// Models and errors

/// Fitted logistic model. Coefficients are on the original column scale; the
/// standardized solution is kept alongside for diagnostics.
struct LogitModel {
    double intercept = 0.0;
    Eigen::VectorXd coefficients;
    double lambda = 0.0;
    Eigen::VectorXd center;  // per-column mean used for fitting
    Eigen::VectorXd scale;   // per-column scale; 0 marks a constant (unused) column
    double intercept_std = 0.0;
    Eigen::VectorXd coefficients_std;
    bool converged = false;
    double kkt_residual = 0.0;
    long cycles = 0;

    Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& X) const {
        check_width(X);
        return (X * coefficients).array() + intercept;
    }

    /// Same predictor evaluated through the standardized coefficients.
    Eigen::VectorXd linear_predictor_standardized(const Eigen::MatrixXd& X) const {
        check_width(X);
        Eigen::VectorXd eta = Eigen::VectorXd::Constant(X.rows(), intercept_std);
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            if (scale[j] > 0.0 && coefficients_std[j] != 0.0)
                eta += coefficients_std[j] * ((X.col(j).array() - center[j]) / scale[j]).matrix();
        return eta;
    }

    std::size_t n_active() const {
        return static_cast<std::size_t>((coefficients.array() != 0.0).count());
    }

private:
    void check_width(const Eigen::MatrixXd& X) const {
        if (X.cols() != coefficients.size())
            throw std::invalid_argument("design width " + std::to_string(X.cols()) + " does not match model width " +
                                        std::to_string(coefficients.size()));
    }
};

struct LogitOptions {
    double tol_kkt = 1e-7;
    long max_iter = 100000;  // full coordinate cycles
    bool standardize = true;
};

/// Coordinate descent hit max_iter; carries the last iterate.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(LogitModel last, double kkt)
        : std::runtime_error("l1-logit coordinate descent did not converge (KKT residual " + std::to_string(kkt) +
                             ", lambda " + std::to_string(last.lambda) + ")"),
          last_(std::move(last)),
          kkt_(kkt) {}

    const LogitModel& last_iterate() const { return last_; }
    double kkt_residual() const { return kkt_; }

private:
    LogitModel last_;
    double kkt_;
};

/// A conditioning stratum needed by a nuisance fit has no records.
class FoldDegenerate : public std::runtime_error {
public:
    explicit FoldDegenerate(std::string stratum, std::optional<std::size_t> fold = std::nullopt)
        : std::runtime_error(message(stratum, fold)), stratum_(std::move(stratum)), fold_(fold) {}

    const std::string& stratum() const { return stratum_; }
    std::optional<std::size_t> fold() const { return fold_; }

private:
    static std::string message(const std::string& stratum, std::optional<std::size_t> fold) {
        std::string m = "no records in stratum " + stratum;
        if (fold) m += " of the training complement of fold " + std::to_string(*fold);
        return m;
    }

    std::string stratum_;
    std::optional<std::size_t> fold_;
};

// ---------------------------------------------------------------------------
// Penalized logistic regression

namespace detail {

inline double log1pexp(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

/// Mean negative log-likelihood of labels y under linear predictor eta.
inline double mean_nll(const Eigen::VectorXd& eta, std::span<const int> y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) s += log1pexp(eta[i]) - y[static_cast<std::size_t>(i)] * eta[i];
    return s / static_cast<double>(eta.size());
}

/// Coordinate-descent solver for
///   (1/n) sum_i [log(1 + e^eta_i) - y_i eta_i] + lambda * ||beta||_1
/// on standardized columns with an unpenalized intercept. Each outer step
/// forms the weighted Gram matrix of the quadratic approximation and runs
/// covariance-update coordinate descent on it. The raw design is held in
/// row-sparse form; centering and scaling enter the Gram matrix algebraically.
/// Holds the current iterate so successive calls along a decreasing lambda
/// path warm-start.
class L1LogitSolver {
public:
    L1LogitSolver(const Eigen::MatrixXd& X, std::span<const int> y, const LogitOptions& opt)
        : y_(y.begin(), y.end()), opt_(opt) {
        const Eigen::Index n = X.rows(), p = X.cols();
        if (n < 2) throw std::invalid_argument("penalized logistic fit needs n >= 2");
        if (static_cast<std::size_t>(n) != y_.size()) throw std::invalid_argument("labels do not match design rows");
        for (int v : y_)
            if (v != 0 && v != 1) throw std::invalid_argument("labels must be binary");
        const double nd = static_cast<double>(n);
        center_ = X.colwise().mean().transpose();
        scale_ = Eigen::VectorXd::Zero(p);
        for (Eigen::Index j = 0; j < p; ++j) {
            const double var = (X.col(j).array() - center_[j]).square().sum() / nd;
            const double sd = std::sqrt(var);
            if (sd > 1e-10 * (1.0 + std::abs(center_[j]))) scale_[j] = opt.standardize ? sd : 1.0;
        }
        for (Eigen::Index j = 0; j < p; ++j)
            if (scale_[j] > 0.0) cols_.push_back(j);
        const auto m = static_cast<Eigen::Index>(cols_.size());
        mu_.resize(m);
        sd_.resize(m);
        std::vector<Eigen::Triplet<double>> trip;
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto j = cols_[static_cast<std::size_t>(k)];
            mu_[k] = center_[j];
            sd_[k] = scale_[j];
            for (Eigen::Index i = 0; i < n; ++i)
                if (X(i, j) != 0.0) trip.emplace_back(i, k, X(i, j));
        }
        X_.resize(n, m);
        X_.setFromTriplets(trip.begin(), trip.end());
        X_.makeCompressed();
        yv_ = Eigen::VectorXd(n);
        for (Eigen::Index i = 0; i < n; ++i) yv_[i] = y_[static_cast<std::size_t>(i)];
        ybar_ = yv_.mean();
        beta_ = Eigen::VectorXd::Zero(m);
        // null model start
        const double yb = std::clamp(ybar_, 1e-9, 1.0 - 1e-9);
        b0_ = std::log(yb / (1.0 - yb));
        eta_ = Eigen::VectorXd::Constant(n, b0_);
        null_nll_ = mean_nll(eta_, y_);
    }

    /// Smallest lambda at which every slope is zero.
    double lambda_max() const {
        if (X_.cols() == 0) return 0.0;
        const Eigen::VectorXd r = yv_.array() - ybar_;
        return standardized_score(r).cwiseAbs().maxCoeff();
    }

    double null_nll() const { return null_nll_; }
    double current_nll() const { return mean_nll(eta_, y_); }
    long cycles() const { return cycles_; }

    /// Solves at `lambda` from the current iterate. Returns the final KKT
    /// residual; throws ConvergenceError when max_iter cycles are exhausted.
    double solve(double lambda) {
        lambda_ = lambda;
        const Eigen::Index n = X_.rows(), m = X_.cols(), q = m + 1;
        const double nd = static_cast<double>(n);
        if (ybar_ == 0.0 || ybar_ == 1.0) {
            // Single-class labels: the likelihood has no finite maximizer, so
            // stop at the clipped-mean intercept (gradient below 1e-9).
            beta_.setZero();
            eta_.setConstant(b0_);
            return kkt_residual();
        }
        Eigen::VectorXd w(n), r(n), c(q);
        Eigen::MatrixXd H(q, q);
        for (;;) {
            for (Eigen::Index i = 0; i < n; ++i) {
                const double pr = logistic(eta_[i]);
                w[i] = std::max(pr * (1.0 - pr), 1e-12);
                r[i] = yv_[i] - pr;
            }
            c[0] = r.sum() / nd;
            c.tail(m) = standardized_score(r);
            const double kkt = kkt_from_gradient(c);
            if (kkt <= opt_.tol_kkt) return kkt;
            if (cycles_ >= opt_.max_iter) throw ConvergenceError(model(), kkt);
            weighted_gram(w, H);

            const double b0_old = b0_;
            const Eigen::VectorXd beta_old = beta_;
            const Eigen::VectorXd eta_old = eta_;
            const double f_old = objective();

            // Inner weighted lasso: full sweeps alternate with sweeps over the active set.
            const double inner_tol = std::max(0.01 * opt_.tol_kkt, std::min(1e-4, 0.01 * kkt * kkt));
            std::vector<Eigen::Index> active;
            bool try_exact = true;
            for (;;) {
                double full_change = 0.0;
                for (Eigen::Index k = 0; k < q; ++k) full_change = std::max(full_change, coordinate_step(k, lambda, H, c));
                ++cycles_;
                active.clear();
                for (Eigen::Index k = 0; k < m; ++k)
                    if (beta_[k] != 0.0) active.push_back(k + 1);
                if (full_change < inner_tol) break;
                if (try_exact && cycles_ < opt_.max_iter) {
                    if (active_set_solve(active, lambda, H, c)) continue;
                    try_exact = false;
                }
                for (;;) {
                    double change = coordinate_step(0, lambda, H, c);
                    for (auto k : active) change = std::max(change, coordinate_step(k, lambda, H, c));
                    ++cycles_;
                    if (change < inner_tol || cycles_ >= opt_.max_iter) break;
                }
                if (cycles_ >= opt_.max_iter) break;
            }
            update_eta();

            // Guard the Newton step: halve toward the previous iterate until the
            // penalized objective does not increase.
            double f_new = objective();
            if (f_new > f_old + 1e-13 * std::abs(f_old)) {
                const double b0_new = b0_;
                const Eigen::VectorXd beta_new = beta_;
                const Eigen::VectorXd eta_new = eta_;
                double step = 1.0;
                for (int h = 0; h < 40 && f_new > f_old + 1e-13 * std::abs(f_old); ++h) {
                    step *= 0.5;
                    b0_ = b0_old + step * (b0_new - b0_old);
                    beta_ = beta_old + step * (beta_new - beta_old);
                    eta_ = eta_old + step * (eta_new - eta_old);
                    f_new = objective();
                }
            }
        }
    }

    double kkt_residual() const {
        const Eigen::Index n = X_.rows();
        Eigen::VectorXd resid(n), g(X_.cols() + 1);
        for (Eigen::Index i = 0; i < n; ++i) resid[i] = yv_[i] - logistic(eta_[i]);
        g[0] = resid.sum() / static_cast<double>(n);
        g.tail(X_.cols()) = standardized_score(resid);
        return kkt_from_gradient(g);
    }

    /// Current iterate as a model on the original column scale.
    LogitModel model() const {
        const auto p = center_.size();
        LogitModel m;
        m.lambda = lambda_;
        m.center = center_;
        m.scale = scale_;
        m.intercept_std = b0_;
        m.coefficients_std = Eigen::VectorXd::Zero(p);
        m.coefficients = Eigen::VectorXd::Zero(p);
        double intercept = b0_;
        for (std::size_t k = 0; k < cols_.size(); ++k) {
            const auto j = cols_[k];
            const double b = beta_[static_cast<Eigen::Index>(k)];
            m.coefficients_std[j] = b;
            m.coefficients[j] = b / scale_[j];
            intercept -= b * center_[j] / scale_[j];
        }
        m.intercept = intercept;
        m.kkt_residual = kkt_residual();
        m.converged = m.kkt_residual <= opt_.tol_kkt;
        m.cycles = cycles_;
        return m;
    }

private:
    using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

    /// KKT residual from g = (mean residual, standardized score).
    double kkt_from_gradient(const Eigen::VectorXd& g) const {
        double worst = std::abs(g[0]);
        for (Eigen::Index k = 0; k < beta_.size(); ++k) {
            const double sk = g[k + 1];
            const double viol = beta_[k] == 0.0 ? std::max(0.0, std::abs(sk) - lambda_)
                                                : std::abs(sk - lambda_ * (beta_[k] > 0 ? 1.0 : -1.0));
            worst = std::max(worst, viol);
        }
        return worst;
    }

    double objective() const { return mean_nll(eta_, y_) + lambda_ * beta_.cwiseAbs().sum(); }

    /// (1/n) Z^T v for the standardized columns Z = (X - 1 mu^T) / sd.
    Eigen::VectorXd standardized_score(const Eigen::VectorXd& v) const {
        const double nd = static_cast<double>(X_.rows());
        Eigen::VectorXd s = X_.transpose() * v;
        s -= v.sum() * mu_;
        return s.cwiseQuotient(sd_) / nd;
    }

    /// H = (1/n) A^T W A with A = [1, Z].
    void weighted_gram(const Eigen::VectorXd& w, Eigen::MatrixXd& H) const {
        const Eigen::Index m = X_.cols();
        const double nd = static_cast<double>(X_.rows());
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, m);  // lower triangle of X^T W X
        Eigen::VectorXd xw = Eigen::VectorXd::Zero(m);     // X^T w
        for (Eigen::Index i = 0; i < X_.outerSize(); ++i) {
            const double wi = w[i];
            for (SparseRows::InnerIterator a(X_, i); a; ++a) {
                const double va = wi * a.value();
                xw[a.col()] += va;
                for (SparseRows::InnerIterator b(X_, i); b && b.col() <= a.col(); ++b) G(a.col(), b.col()) += va * b.value();
            }
        }
        const double ws = w.sum();
        const Eigen::VectorXd inv = (sd_ * std::sqrt(nd)).cwiseInverse();
        H(0, 0) = ws / nd;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double h0 = (xw[j] - ws * mu_[j]) * inv[j] / std::sqrt(nd);
            H(0, j + 1) = h0;
            H(j + 1, 0) = h0;
            const double a = xw[j] - ws * mu_[j];
            for (Eigen::Index k = 0; k <= j; ++k) {
                const double g = G(j, k) - mu_[j] * xw[k] - a * mu_[k];
                H(j + 1, k + 1) = g * inv[j] * inv[k];
                H(k + 1, j + 1) = H(j + 1, k + 1);
            }
        }
    }

    /// Exact minimizer of the quadratic subproblem over the intercept and the
    /// active coordinates with their signs held fixed. When the minimizer would
    /// flip a sign, moves to the first zero crossing, drops that coordinate and
    /// solves again. Returns false only when a system cannot be solved.
    bool active_set_solve(std::vector<Eigen::Index> active, double lambda, const Eigen::MatrixXd& H,
                          Eigen::VectorXd& c) {
        while (true) {
            const auto s = static_cast<Eigen::Index>(active.size()) + 1;
            std::vector<Eigen::Index> idx{0};
            idx.insert(idx.end(), active.begin(), active.end());
            Eigen::VectorXd b(s), rhs(s);
            Eigen::MatrixXd Hs(s, s);
            for (Eigen::Index a = 0; a < s; ++a) {
                b[a] = coef(idx[a]);
                for (Eigen::Index e = 0; e <= a; ++e) Hs(a, e) = H(idx[a], idx[e]);
            }
            Hs.triangularView<Eigen::StrictlyUpper>() = Hs.transpose();
            rhs.noalias() = Hs * b;
            for (Eigen::Index a = 0; a < s; ++a)
                rhs[a] += c[idx[a]] - (a == 0 ? 0.0 : lambda * (b[a] > 0.0 ? 1.0 : -1.0));
            // a relative ridge keeps the system solvable when spline columns are
            // collinear with the intercept
            Hs.diagonal().array() += 1e-12 * Hs.diagonal().maxCoeff();
            const Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(Hs);
            if (llt.info() != Eigen::Success) return false;
            const Eigen::VectorXd sol = llt.solve(rhs);
            if (!sol.allFinite()) return false;
            double t = 1.0;
            Eigen::Index hit = 0;
            for (Eigen::Index a = 1; a < s; ++a)
                if (sol[a] * b[a] <= 0.0) {
                    const double ta = b[a] / (b[a] - sol[a]);
                    if (ta < t) {
                        t = ta;
                        hit = a;
                    }
                }
            for (Eigen::Index a = 0; a < s; ++a) {
                const double next = a == hit && hit > 0 ? 0.0 : b[a] + t * (sol[a] - b[a]);
                const double d = next - b[a];
                if (d == 0.0) continue;
                c.noalias() -= d * H.col(idx[a]);
                coef(idx[a]) = next;
            }
            if (hit == 0) return true;
            active.erase(active.begin() + (hit - 1));
        }
    }

    double& coef(Eigen::Index k) { return k == 0 ? b0_ : beta_[k - 1]; }

    void update_eta() {
        const Eigen::VectorXd b = beta_.cwiseQuotient(sd_);
        eta_.noalias() = X_ * b;
        eta_.array() += b0_ - mu_.dot(b);
    }

    /// One coordinate of the quadratic subproblem; k = 0 is the unpenalized
    /// intercept. Keeps c equal to the subproblem gradient.
    double coordinate_step(Eigen::Index k, double lambda, const Eigen::MatrixXd& H, Eigen::VectorXd& c) {
        const double hkk = H(k, k);
        if (hkk <= 0.0) return 0.0;
        double& b = k == 0 ? b0_ : beta_[k - 1];
        const double g = c[k] + hkk * b;
        const double num = k == 0 ? g : (g > lambda ? g - lambda : (g < -lambda ? g + lambda : 0.0));
        const double d = num / hkk - b;
        if (d == 0.0) return 0.0;
        b += d;
        c.noalias() -= d * H.col(k);
        return hkk * std::abs(d);
    }

    std::vector<int> y_;
    LogitOptions opt_;
    Eigen::VectorXd center_, scale_;
    std::vector<Eigen::Index> cols_;
    SparseRows X_;             // raw values of the non-constant columns
    Eigen::VectorXd mu_, sd_;  // their centering and scaling
    Eigen::VectorXd yv_;
    double ybar_ = 0.0;
    double b0_ = 0.0;
    Eigen::VectorXd beta_;
    Eigen::VectorXd eta_;
    double lambda_ = 0.0;
    double null_nll_ = 0.0;
    long cycles_ = 0;
};

}  // namespace detail

/// max_j |(1/n) sum_i z_ij (y_i - ybar)| over standardized columns.
inline double lambda_max(const Eigen::MatrixXd& X, std::span<const int> y, const LogitOptions& opt = {}) {
    return detail::L1LogitSolver(X, y, opt).lambda_max();
}

/// Log-spaced decreasing path from lambda_max down to ratio * lambda_max.
inline std::vector<double> lambda_path(double lmax, int n_lambda, double min_ratio) {
    if (n_lambda < 1) throw std::invalid_argument("n_lambda must be positive");
    if (!(min_ratio > 0.0 && min_ratio < 1.0)) throw std::invalid_argument("lambda_min_ratio must lie in (0,1)");
    std::vector<double> path(static_cast<std::size_t>(n_lambda));
    if (lmax <= 0.0) lmax = 1e-8;  // every slope is already zero; any positive path works
    for (int k = 0; k < n_lambda; ++k)
        path[static_cast<std::size_t>(k)] =
            n_lambda == 1 ? lmax : lmax * std::pow(min_ratio, static_cast<double>(k) / (n_lambda - 1));
    return path;
}

/// l1-penalized logistic regression at one penalty value (cold start from the null model).
inline LogitModel fit_logit_l1(const Eigen::MatrixXd& X, std::span<const int> y, double lambda,
                               const LogitOptions& opt = {}) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    detail::L1LogitSolver solver(X, y, opt);
    solver.solve(lambda);
    return solver.model();
}

struct LogitPath {
    std::vector<double> lambdas;       // lambdas actually fitted (a prefix of the request)
    std::vector<LogitModel> models;
    std::vector<double> train_deviance;  // 2 * n * mean NLL
    bool stopped_early = false;
};

/// Warm-started fits along a decreasing lambda sequence. The path stops early
/// once the deviance ratio exceeds 0.999, its relative gain drops below 1e-5,
/// or a fit fails to converge after at least one success.
inline LogitPath fit_logit_path(const Eigen::MatrixXd& X, std::span<const int> y, std::span<const double> lambdas,
                                const LogitOptions& opt = {}) {
    for (std::size_t k = 1; k < lambdas.size(); ++k)
        if (!(lambdas[k] < lambdas[k - 1])) throw std::invalid_argument("lambda path must be strictly decreasing");
    detail::L1LogitSolver solver(X, y, opt);
    const double nd = static_cast<double>(X.rows());
    const double null_dev = 2.0 * nd * solver.null_nll();
    LogitPath path;
    double prev_ratio = 0.0;
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        try {
            solver.solve(lambdas[k]);
        } catch (const ConvergenceError&) {
            if (path.models.empty()) throw;
            path.stopped_early = true;
            break;
        }
        path.lambdas.push_back(lambdas[k]);
        path.models.push_back(solver.model());
        const double dev = 2.0 * nd * solver.current_nll();
        path.train_deviance.push_back(dev);
        const double ratio = null_dev > 0.0 ? 1.0 - dev / null_dev : 1.0;
        if (ratio > 0.999 || (k >= 5 && ratio - prev_ratio < 1e-5 * ratio)) {
            path.stopped_early = k + 1 < lambdas.size();
            break;
        }
        prev_ratio = ratio;
    }
    return path;
}

/// Logistic link of the linear predictor, clipped into [eps, 1 - eps].
inline std::vector<double> predict_proba(const LogitModel& model, const Eigen::MatrixXd& X, double epsilon_trim) {
    const Eigen::VectorXd eta = model.linear_predictor(X);
    std::vector<double> p(static_cast<std::size_t>(eta.size()));
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        p[static_cast<std::size_t>(i)] = std::clamp(logistic(eta[i]), epsilon_trim, 1.0 - epsilon_trim);
    return p;
}

/// Mean held-out negative log-likelihood with clipped probabilities.
inline double clipped_deviance(const LogitModel& model, const Eigen::MatrixXd& X, std::span<const int> y,
                               double epsilon_trim) {
    const auto p = predict_proba(model, X, epsilon_trim);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s -= y[i] ? std::log(p[i]) : std::log1p(-p[i]);
    return s / static_cast<double>(p.size());
}

// ---------------------------------------------------------------------------
// Cross-validated penalty

struct CvPlan {
    std::size_t n_folds = 10;
    std::vector<double> lambda_path;  // empty: automatic path from the data
    int n_lambda = 100;
    double lambda_min_ratio = 1e-4;
};

struct CvLogitFit {
    LogitModel model;                 // refit on all rows at the selected lambda
    std::vector<double> lambdas;
    std::vector<double> cv_deviance;  // per lambda, mean held-out NLL
    std::size_t selected = 0;
    std::vector<std::string> warnings;
};

namespace detail {

template <class T>
std::vector<T> pick(std::span<const T> v, std::span<const std::size_t> idx) {
    std::vector<T> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
    return out;
}

inline Eigen::MatrixXd pick_rows(const Eigen::MatrixXd& X, std::span<const std::size_t> idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

}  // namespace detail

/// K-fold cross-validation over the lambda path; selects the minimizer of
/// held-out deviance and refits on all rows there.
inline CvLogitFit cv_fit_logit_l1(const Eigen::MatrixXd& X, std::span<const int> y, const CvPlan& plan,
                                  std::uint64_t seed, const LogitOptions& opt = {}, double epsilon_trim = 1e-3) {
    const auto n = static_cast<std::size_t>(X.rows());
    if (plan.n_folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
    if (n < 2 * plan.n_folds) throw std::invalid_argument("cross-validation needs n >= 2 * n_folds");

    std::vector<double> lambdas = plan.lambda_path;
    if (lambdas.empty()) lambdas = lambda_path(lambda_max(X, y, opt), plan.n_lambda, plan.lambda_min_ratio);

    CvLogitFit out;
    const LogitPath full = fit_logit_path(X, y, lambdas, opt);
    out.lambdas = full.lambdas;
    const std::size_t L = full.lambdas.size();
    out.cv_deviance.assign(L, 0.0);

    const FoldPlan folds = make_folds(n, plan.n_folds, seed);
    for (std::size_t k = 0; k < plan.n_folds; ++k) {
        const auto train = folds.complement(k);
        std::vector<std::size_t> test;
        for (std::size_t i = 0; i < n; ++i)
            if (folds.assignment[i] == k) test.push_back(i);
        const Eigen::MatrixXd Xtr = detail::pick_rows(X, train), Xte = detail::pick_rows(X, test);
        const auto ytr = detail::pick<int>(y, train), yte = detail::pick<int>(y, test);
        if (std::all_of(ytr.begin(), ytr.end(), [&](int v) { return v == ytr.front(); }))
            out.warnings.push_back("cv fold " + std::to_string(k) + " has single-class training labels");
        const LogitPath fp = fit_logit_path(Xtr, ytr, std::span<const double>(full.lambdas), opt);
        for (std::size_t l = 0; l < L; ++l) {
            const LogitModel& m = fp.models[std::min(l, fp.models.size() - 1)];
            out.cv_deviance[l] += clipped_deviance(m, Xte, yte, epsilon_trim) * static_cast<double>(test.size());
        }
    }
    for (auto& d : out.cv_deviance) d /= static_cast<double>(n);
    out.selected = static_cast<std::size_t>(std::min_element(out.cv_deviance.begin(), out.cv_deviance.end()) -
                                            out.cv_deviance.begin());
    out.model = full.models[out.selected];
    return out;
}

// ---------------------------------------------------------------------------
// Unpenalized maximum likelihood (IRLS)

struct IrlsOptions {
    int max_iter = 100;
    double tol = 1e-10;
};

/// Newton-Raphson/IRLS logistic MLE on the raw columns. Aliased columns
/// (rank deficiency, e.g. a spline block plus intercept) get coefficient 0.
/// Non-convergence (separation) is reported through `converged`, not thrown.
inline LogitModel fit_logit_mle(const Eigen::MatrixXd& X, std::span<const int> y, const IrlsOptions& opt = {}) {
    const Eigen::Index n = X.rows(), p = X.cols();
    if (static_cast<std::size_t>(n) != y.size()) throw std::invalid_argument("labels do not match design rows");
    Eigen::MatrixXd A(n, p + 1);
    A.col(0).setOnes();
    A.rightCols(p) = X;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-9);
    std::vector<Eigen::Index> keep;
    keep.push_back(0);
    for (Eigen::Index k = 0; k < qr.rank(); ++k) {
        const Eigen::Index c = qr.colsPermutation().indices()[k];
        if (c != 0) keep.push_back(c);
    }
    std::sort(keep.begin(), keep.end());
    const auto q = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd B(n, q);
    for (Eigen::Index k = 0; k < q; ++k) B.col(k) = A.col(keep[static_cast<std::size_t>(k)]);

    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv[i] = y[static_cast<std::size_t>(i)];
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
    const double yb = std::clamp(yv.mean(), 1e-9, 1.0 - 1e-9);
    beta[0] = std::log(yb / (1.0 - yb));

    auto nll = [&](const Eigen::VectorXd& b) {
        const Eigen::VectorXd eta = B * b;
        return detail::mean_nll(eta, y);
    };
    bool converged = false;
    int it = 0;
    double grad_norm = 0.0;
    for (; it < opt.max_iter; ++it) {
        const Eigen::VectorXd eta = B * beta;
        Eigen::VectorXd prob(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = logistic(eta[i]);
            w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
        }
        const Eigen::VectorXd grad = B.transpose() * (yv - prob) / static_cast<double>(n);
        grad_norm = grad.cwiseAbs().maxCoeff();
        if (grad_norm < opt.tol) {
            converged = true;
            break;
        }
        const Eigen::MatrixXd H = B.transpose() * w.asDiagonal() * B / static_cast<double>(n);
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        const double f0 = nll(beta);
        double s = 1.0;
        Eigen::VectorXd cand = beta + step;
        for (int h = 0; h < 30 && nll(cand) > f0 + 1e-14 * std::abs(f0); ++h) {
            s *= 0.5;
            cand = beta + s * step;
        }
        const double move = (cand - beta).cwiseAbs().maxCoeff();
        beta = cand;
        if (move < opt.tol * (1.0 + beta.cwiseAbs().maxCoeff())) {
            converged = true;
            break;
        }
    }
    LogitModel m;
    m.lambda = 0.0;
    m.center = Eigen::VectorXd::Zero(p);
    m.scale = Eigen::VectorXd::Ones(p);
    m.coefficients = Eigen::VectorXd::Zero(p);
    m.intercept = beta[0];
    for (Eigen::Index k = 1; k < q; ++k) m.coefficients[keep[static_cast<std::size_t>(k)] - 1] = beta[k];
    m.intercept_std = m.intercept;
    m.coefficients_std = m.coefficients;
    m.converged = converged;
    m.kkt_residual = grad_norm;
    m.cycles = it;
    return m;
}

// ---------------------------------------------------------------------------
// Learners and nuisance triples

enum class LearnerKind { l1_logit, mle_logit, oracle };

inline const char* to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::l1_logit: return "l1_logit";
        case LearnerKind::mle_logit: return "mle_logit";
        case LearnerKind::oracle: return "oracle";
    }
    return "?";
}

/// Joint law P(Y=y, T=t | X=x) as a function of a raw covariate row.
using TruthFn = std::function<JointCells(std::span<const double>)>;

struct LearnerConfig {
    LearnerKind kind = LearnerKind::l1_logit;
    double epsilon_trim = 1e-3;
    int n_lambda = 100;
    double lambda_min_ratio = 1e-4;
    std::size_t cv_folds = 10;
    double tol = 1e-7;
    long max_iter = 100000;
    std::uint64_t seed = 1;
    std::optional<double> fixed_lambda;  // skip cross-validation when set
    TruthFn truth;                       // required by the oracle learner
};

/// Three fitted conditional-probability predictors for one form.
class FittedNuisance {
public:
    Form form() const { return form_; }
    const std::array<LogitModel, 3>& models() const { return models_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    /// Evaluates (f0, f1, w) on arbitrary raw covariate rows.
    NuisanceTriple predict(const Eigen::MatrixXd& raw) const {
        const double eps = cfg_.epsilon_trim;
        std::array<std::vector<double>, 3> v;
        if (cfg_.kind == LearnerKind::oracle) {
            for (auto& c : v) c.resize(static_cast<std::size_t>(raw.rows()));
            std::vector<double> row(static_cast<std::size_t>(raw.cols()));
            for (Eigen::Index i = 0; i < raw.rows(); ++i) {
                for (Eigen::Index j = 0; j < raw.cols(); ++j) row[static_cast<std::size_t>(j)] = raw(i, j);
                const Conditionals c = conditionals(cfg_.truth(row));
                const std::array<double, 3> vals = form_ == Form::prospective ? std::array<double, 3>{c.p0, c.p1, c.pt}
                                                                               : std::array<double, 3>{c.q0, c.q1, c.py};
                for (std::size_t k = 0; k < 3; ++k)
                    v[k][static_cast<std::size_t>(i)] = std::clamp(vals[k], eps, 1.0 - eps);
            }
        } else {
            const Eigen::MatrixXd design = featurizer_->transform(raw).matrix;
            for (std::size_t k = 0; k < 3; ++k) v[k] = predict_proba(models_[k], design, eps);
        }
        return NuisanceTriple(form_, std::move(v[0]), std::move(v[1]), std::move(v[2]), eps);
    }

private:
    friend FittedNuisance fit_nuisance_triple(const Dataset&, Form, const LearnerConfig&, const FeatureSpec&);

    Form form_ = Form::prospective;
    LearnerConfig cfg_;
    std::optional<Featurizer> featurizer_;
    std::array<LogitModel, 3> models_;
    std::vector<std::string> warnings_;
};

/// Fits one probability model on (design, labels) with the configured learner.
inline LogitModel fit_probability_model(const Eigen::MatrixXd& design, std::span<const int> labels,
                                        const LearnerConfig& cfg, std::uint64_t seed,
                                        std::vector<std::string>* warnings = nullptr) {
    if (cfg.kind == LearnerKind::mle_logit) return fit_logit_mle(design, labels);
    const LogitOptions opt{cfg.tol, cfg.max_iter, true};
    if (cfg.fixed_lambda) return fit_logit_l1(design, labels, *cfg.fixed_lambda, opt);
    CvPlan plan;
    plan.n_folds = cfg.cv_folds;
    plan.n_lambda = cfg.n_lambda;
    plan.lambda_min_ratio = cfg.lambda_min_ratio;
    CvLogitFit fit = cv_fit_logit_l1(design, labels, plan, seed, opt, cfg.epsilon_trim);
    if (warnings) warnings->insert(warnings->end(), fit.warnings.begin(), fit.warnings.end());
    return std::move(fit.model);
}

/// Fits the nuisance triple of `form` on `train`.
///  prospective:   P(Y=1|T=1,X) on T=1 rows, P(Y=1|T=0,X) on T=0 rows, P(T=1|X) on all rows
///  retrospective: P(T=1|Y=1,X) on Y=1 rows, P(T=1|Y=0,X) on Y=0 rows, P(Y=1|X) on all rows
/// The featurizer is fitted on `train` only.
inline FittedNuisance fit_nuisance_triple(const Dataset& train, Form form, const LearnerConfig& cfg,
                                          const FeatureSpec& spec) {
    if (!(cfg.epsilon_trim > 0.0 && cfg.epsilon_trim < 0.5)) throw std::invalid_argument("epsilon_trim must lie in (0, 0.5)");
    const auto& strat = form == Form::prospective ? train.t() : train.y();
    const auto& label = form == Form::prospective ? train.y() : train.t();
    const char* sname = form == Form::prospective ? "T" : "Y";
    std::array<std::vector<std::size_t>, 2> rows;
    for (std::size_t i = 0; i < train.size(); ++i) rows[static_cast<std::size_t>(strat[i])].push_back(i);
    for (int s : {1, 0})
        if (rows[static_cast<std::size_t>(s)].empty()) throw FoldDegenerate(std::string(sname) + "=" + std::to_string(s));

    FittedNuisance fn;
    fn.form_ = form;
    fn.cfg_ = cfg;
    if (cfg.kind == LearnerKind::oracle) {
        if (!cfg.truth) throw std::invalid_argument("oracle learner requires a truth function");
        return fn;
    }
    fn.featurizer_ = Featurizer::fit(spec, train.x(), train.kinds(), train.names());
    const Eigen::MatrixXd design = fn.featurizer_->transform(train.x()).matrix;
    for (std::size_t s = 0; s < 2; ++s) {
        const Eigen::MatrixXd Xs = detail::pick_rows(design, rows[s]);
        const auto ys = detail::pick<int>(std::span<const int>(label), rows[s]);
        fn.models_[s] = fit_probability_model(Xs, ys, cfg, cfg.seed + 0x9e3779b97f4a7c15ULL * (s + 1), &fn.warnings_);
    }
    fn.models_[2] = fit_probability_model(design, strat, cfg, cfg.seed + 0x9e3779b97f4a7c15ULL * 3, &fn.warnings_);
    return fn;
}

}  // namespace aaa
