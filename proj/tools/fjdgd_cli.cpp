// fjdgd: deterministic multi-agent decentralized-learning experiments.

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "fjdgd/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Decentralized gradient descent with stubborn (FJ) agents: "
                 "dataset generation, experiment runs, sweeps, and oracle analysis"};
    app.require_subcommand(1);

    std::string config_path, out_dir, run_dir, param;
    std::vector<std::string> values;
    bool force = false;
    int threads = 1;

    auto* gen = app.add_subcommand("gen-data", "Write the configured dataset to a directory");
    gen->add_option("--config", config_path, "experiment config file")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_flag("--force", force, "write into a non-empty directory");

    auto* run = app.add_subcommand("run", "Run one experiment and write trace/summary/certificate");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_flag("--force", force, "write into a non-empty directory");
    run->add_option("--threads", threads, "worker threads (results are thread-count independent)")
        ->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a single parameter");
    sweep->add_option("--config", config_path, "base experiment config file")->required();
    sweep->add_option("--param", param, "parameter to vary (e.g. lambda)")->required();
    sweep->add_option("--values", values, "comma-separated values")
        ->required()
        ->delimiter(',');
    sweep->add_option("--out", out_dir, "output directory")->required();
    sweep->add_flag("--force", force, "write into a non-empty directory");
    sweep->add_option("--threads", threads, "worker threads per run")->check(CLI::PositiveNumber);

    auto* analyze = app.add_subcommand("analyze", "Compute fixed-point oracles for a finished run");
    analyze->add_option("run_dir", run_dir, "directory written by `run`")->required();
    analyze->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return fjdgd::cmd_gen_data(config_path, out_dir, force);
        if (run->parsed()) return fjdgd::cmd_run(config_path, out_dir, force, threads);
        if (sweep->parsed())
            return fjdgd::cmd_sweep(config_path, param, values, out_dir, force, threads);
        if (analyze->parsed()) return fjdgd::cmd_analyze(run_dir, threads);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
