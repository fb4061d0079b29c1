// aaa: estimate, simulate and check average adjusted association.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aaa/cli.hpp"
#include "aaa/parallel.hpp"

int main(int argc, char** argv) {
    namespace cli = aaa::cli;
    CLI::App app{"Average adjusted association: DML estimation, Monte Carlo simulation and identity checks"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    int threads = 0;
    app.add_option("-c,--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", overrides, "Override a configuration value, e.g. --set crossfit.K=5")->allow_extra_args(false);
    app.add_option("--threads", threads, "Worker threads (default: AAA_THREADS, else 1)");

    auto* est = app.add_subcommand("estimate", "Cross-fitted DML estimate of theta0 from a CSV file");
    std::string data_path, output_path;
    est->add_option("--data", data_path, "CSV input (overrides data.path)");
    auto* sim = app.add_subcommand("simulate", "Monte Carlo comparison of DML and plug-in estimators");
    auto* chk = app.add_subcommand("check", "Enumeration checks of the influence-function identities");
    for (auto* sub : {est, sim, chk}) sub->add_option("-o,--output", output_path, "Output file (overrides output.path)");

    auto* smp = app.add_subcommand("sample", "Write a synthetic CSV drawn from the simulation DGP");
    std::size_t n = 5000;
    std::uint64_t seed = 1;
    std::string sample_path;
    smp->add_option("-n", n, "Number of records");
    smp->add_option("--seed", seed, "Random seed");
    smp->add_option("-o,--output", sample_path, "Output CSV (default: stdout)");

    // Global options may also follow the subcommand.
    for (auto* sub : {est, sim, chk, smp}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::config_error;
    }

    cli::Json cfg;
    try {
        cfg = cli::load_config(config_path, overrides);
        if (!data_path.empty()) cfg["data"]["path"] = data_path;
        if (!output_path.empty()) cfg["output"]["path"] = output_path;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::config_error;
    }
    const unsigned nthreads = aaa::resolve_threads(threads);

    if (*est) return cli::cmd_estimate(cfg, nthreads);
    if (*sim) return cli::cmd_simulate(cfg, nthreads);
    if (*chk) return cli::cmd_check(cfg, nthreads);
    if (*smp) return cli::cmd_sample(cfg, n, seed, sample_path);
    return cli::config_error;
}
