// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>

#include "aaa/cli.hpp"
#include "aaa/crossfit.hpp"
#include "aaa/nuisance.hpp"
#include "aaa/oracle.hpp"
#include "aaa/simulate.hpp"

using namespace aaa;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

unsigned threads() { return std::max(1u, std::thread::hardware_concurrency()); }

SweepConfig sweep(std::size_t n_dgps) {
    SweepConfig c;
    c.n_dgps = n_dgps;
    c.threads = threads();
    return c;
}

// Plain Newton on [1, X], independent of the library solvers.
Eigen::VectorXd newton_reference(const Eigen::MatrixXd& X, const std::vector<int>& y) {
    const Eigen::Index n = X.rows(), p = X.cols();
    Eigen::MatrixXd A(n, p + 1);
    A.col(0).setOnes();
    A.rightCols(p) = X;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p + 1), yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv[i] = y[static_cast<std::size_t>(i)];
    for (int it = 0; it < 50; ++it) {
        Eigen::VectorXd pr(n), w(n);
        const Eigen::VectorXd eta = A * b;
        for (Eigen::Index i = 0; i < n; ++i) {
            pr[i] = 1.0 / (1.0 + std::exp(-eta[i]));
            w[i] = pr[i] * (1.0 - pr[i]);
        }
        b += (A.transpose() * w.asDiagonal() * A).ldlt().solve(A.transpose() * (yv - pr));
    }
    return b;
}

Outcome learner_correctness() {
    Rng rng = make_rng(606, 0);
    const Eigen::Index n = 200;
    Eigen::MatrixXd X(n, 3);
    std::vector<int> y;
    const double beta[3] = {0.8, -0.5, 0.3};
    for (Eigen::Index i = 0; i < n; ++i) {
        double eta = -0.2;
        for (int j = 0; j < 3; ++j) eta += beta[j] * (X(i, j) = 2.0 * uniform01(rng) - 1.0 + j);
        y.push_back(bernoulli(rng, logistic(eta)));
    }
    const LogitModel l1 = fit_logit_l1(X, y, 0.0);
    const LogitModel mle = fit_logit_mle(X, y);
    const Eigen::VectorXd ref = newton_reference(X, y);
    double irls_gap = std::abs(l1.intercept - mle.intercept), ref_gap = std::abs(l1.intercept - ref[0]);
    for (int j = 0; j < 3; ++j) {
        irls_gap = std::max(irls_gap, std::abs(l1.coefficients[j] - mle.coefficients[j]));
        ref_gap = std::max(ref_gap, std::abs(l1.coefficients[j] - ref[j + 1]));
    }

    const double lmax = lambda_max(X, y);
    double max_slope = 0.0;
    for (double f : {1.0, 2.0}) max_slope = std::max(max_slope, fit_logit_l1(X, y, f * lmax).coefficients.cwiseAbs().maxCoeff());

    // KKT along full paths: the small problem and the over-specified simulation design
    double worst_kkt = l1.kkt_residual;
    std::size_t solutions = 1;
    auto scan = [&](const Eigen::MatrixXd& A, const std::vector<int>& lab) {
        const auto lams = lambda_path(lambda_max(A, lab), 100, 1e-4);
        const LogitPath path = fit_logit_path(A, lab, lams);
        for (const auto& m : path.models) worst_kkt = std::max(worst_kkt, m.kkt_residual);
        solutions += path.models.size();
    };
    scan(X, y);
    const LogitDGP dgp;
    const Dataset d = sample(dgp, 2000, 607);
    const Eigen::MatrixXd D = build_design(default_sim_features(dgp), d.x(), d.kinds(), d.names()).matrix;
    for (int arm : {0, 1}) {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d.t()[i] == arm) rows.push_back(static_cast<Eigen::Index>(i));
        Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), D.cols());
        std::vector<int> lab;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            A.row(static_cast<Eigen::Index>(r)) = D.row(rows[r]);
            lab.push_back(d.y()[static_cast<std::size_t>(rows[r])]);
        }
        scan(A, lab);
    }
    scan(D, d.t());

    const bool pass = irls_gap < 1e-5 && max_slope == 0.0 && worst_kkt < 1e-7;
    return {pass, fmt("lambda=0 vs IRLS max |diff| %.2e (tol 1e-5), vs Newton %.2e; slopes at lambda>=lambda_max %.1g; "
                      "max KKT %.2e over %zu solutions (tol 1e-7)",
                      irls_gap, ref_gap, max_slope, worst_kkt, solutions)};
}

Outcome monte_carlo() {
    cli::Json cfg = cli::default_config();
    cfg["simulate"]["estimators"] = {"dml_prospective", "plugin_prospective"};
    const cli::Json& sim = cfg["simulate"];
    cli::Json lj = cfg["learner"];
    cli::merge_into(lj, sim["learner"]);
    const LearnerConfig learner = cli::parse_learner(lj);
    const LogitDGP dgp = cli::parse_dgp(sim["dgp"]);
    McConfig mc;
    mc.n = 2000;
    mc.reps = 300;
    mc.K = 5;
    mc.alpha = 0.10;
    mc.seed = sim["seed"].get<std::uint64_t>();
    mc.threads = threads();
    const McReport rep = run_mc(dgp, cli::parse_estimators(sim, dgp, learner), mc);
    std::printf("%s", format_mc_table(rep).c_str());
    const McRow& dml = rep.rows.at(0);
    const McRow& plug = rep.rows.at(1);
    const bool a = std::abs(dml.mean_bias) < std::abs(plug.mean_bias);
    const bool b = dml.coverage && *dml.coverage >= 0.85 && *dml.coverage <= 0.95;
    const bool c = dml.se_sd_ratio && *dml.se_sd_ratio >= 0.85 && *dml.se_sd_ratio <= 1.15;
    const bool valid = rep.valid();
    return {a && b && c && valid,
            fmt("(a) |bias| dml %.4f vs plug-in %.4f %s; (b) coverage %.3f %s; (c) se/sd %.3f %s; failures %zu/%zu",
                std::abs(dml.mean_bias), std::abs(plug.mean_bias), a ? "ok" : "NO", dml.coverage.value_or(NAN),
                b ? "ok" : "NO", dml.se_sd_ratio.value_or(NAN), c ? "ok" : "NO", dml.failures + plug.failures,
                2 * rep.reps)};
}

Outcome oracle_consistency() {
    const DiscreteDGP dgp({0.0}, {1.0}, {JointCells{{0.3, 0.2, 0.2, 0.3}}}, 0.01);
    LearnerConfig learner;
    learner.kind = LearnerKind::oracle;
    learner.truth = discrete_truth(dgp);
    const FeatureSpec spec = FeatureSpec::passthrough(1);
    const std::size_t runs = 100, n = 50000;
    std::vector<int> hit(runs, 0);
    std::vector<double> gap(runs, 0.0);
    parallel_for(runs, threads(), [&](std::size_t r) {
        const Dataset d = sample_discrete(dgp, n, 8000 + r);
        const CrossfitConfig cc{5, 9000 + r, 0.05, 1};
        const Estimate p = dml_estimate(d, spec, learner, cc, Form::prospective);
        const Estimate q = dml_estimate(d, spec, learner, cc, Form::retrospective);
        hit[r] = std::abs(p.theta_hat - 0.810930) < 3.0 * *p.sigma_hat / std::sqrt(static_cast<double>(n)) ? 1 : 0;
        gap[r] = std::abs(p.theta_hat - q.theta_hat);
    });
    std::size_t hits = 0;
    double worst = 0.0;
    for (std::size_t r = 0; r < runs; ++r) {
        hits += static_cast<std::size_t>(hit[r]);
        worst = std::max(worst, gap[r]);
    }
    return {hits >= 95 && worst <= 1e-10,
            fmt("%zu/%zu runs within 3 sigma/sqrt(n) (need 95); max |prospective - retrospective| %.2e (tol 1e-10)", hits,
                runs, worst)};
}

Outcome cli_determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / ("aaa_accept_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    auto run = [&](int t) {
        const fs::path out = dir / ("sim_" + std::to_string(t) + ".json");
        const std::string cmd = std::string(AAA_CLI_PATH) + " simulate --threads " + std::to_string(t) +
                                " --set simulate.n=500 --set simulate.reps=8 --set simulate.seed=77 -o " + out.string() +
                                " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        std::ifstream in(out, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return std::make_pair(WIFEXITED(status) ? WEXITSTATUS(status) : -1, s.str());
    };
    const auto a = run(1), b = run(8);
    fs::remove_all(dir);
    const bool pass = a.first == 0 && b.first == 0 && !a.second.empty() && a.second == b.second;
    return {pass, fmt("exit codes %d/%d, %zu vs %zu bytes, %s", a.first, b.first, a.second.size(), b.second.size(),
                      a.second == b.second ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
    std::printf("threads: %u\n", threads());

    criterion(1, "eif_equality", [] {
        const auto t0 = Clock::now();
        const TheoremReport r = sweep_eif(sweep(1000));
        const double secs = seconds_since(t0);
        return Outcome{r.pass && secs < 10.0,
                       fmt("max |F_p - F_r| %.2e over %zu DGPs (tol 1e-10); %.2f s (limit 10 s)", r.max_violation,
                           r.instances, secs)};
    });

    criterion(2, "mean_zero_and_v_eff", [] {
        const TheoremReport r = sweep_mean_zero(sweep(1000));
        return Outcome{r.pass, fmt("max violation %.2e over %zu DGPs (tol 1e-12)", r.max_violation, r.instances)};
    });

    criterion(3, "neyman_orthogonality", [] {
        const auto t0 = Clock::now();
        SweepConfig c = sweep(20);
        c.n_directions = 20;
        const TheoremReport r = sweep_orthogonality(c);
        const double secs = seconds_since(t0);
        return Outcome{r.pass && secs < 30.0,
                       fmt("max |derivative| %.2e over %zu cases (tol 1e-6); powered fraction %.3f (need 0.5); %.2f s",
                           r.max_violation, r.instances, r.criteria.at(0).value, secs)};
    });

    criterion(4, "double_robustness", [] {
        const TheoremReport r = sweep_double_robustness(sweep(1000));
        return Outcome{r.pass, fmt("max |E[m|x]| %.2e (tol 1e-12); min offset moment %.3e (need > 1e-3); "
                                   "max |F_DR - F_p| %.2e (tol 1e-10)",
                                   r.max_violation, r.criteria.at(0).value, r.criteria.at(1).value)};
    });

    criterion(5, "v_eff_vs_simulation", [] {
        Rng g = make_rng(505, 0);
        DiscreteDGP dgp = random_dgp(g, 4);
        while (dgp.size() != 4) dgp = random_dgp(g, 4);
        const Dataset d = sample_discrete(dgp, 1000000, 506);
        std::map<double, std::size_t> index;
        for (std::size_t i = 0; i < dgp.size(); ++i) index[dgp.point(i)] = i;
        std::vector<double> psi(d.size());
        for (std::size_t r = 0; r < d.size(); ++r) {
            const auto c = dgp.conditionals(index.at(d.x()(static_cast<Eigen::Index>(r), 0)));
            psi[r] = psi_prospective(d.y()[r], d.t()[r], c.p0, c.p1, c.pt);
        }
        double mean = 0.0, ss = 0.0;
        for (double v : psi) mean += v;
        mean /= static_cast<double>(psi.size());
        for (double v : psi) ss += (v - mean) * (v - mean);
        const double emp = ss / static_cast<double>(psi.size() - 1), v = exact_v_eff(dgp);
        const double rel = std::abs(emp - v) / v;
        return Outcome{rel < 0.02, fmt("empirical %.5f vs exact %.5f, relative error %.4f (tol 0.02)", emp, v, rel)};
    });

    criterion(6, "learner_correctness", learner_correctness);
    criterion(7, "monte_carlo_n2000_reps300", monte_carlo);
    criterion(8, "oracle_learner_consistency", oracle_consistency);
    criterion(9, "cli_thread_determinism", cli_determinism);

    std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}
