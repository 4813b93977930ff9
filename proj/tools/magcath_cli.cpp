// Command-line front end: simulate | optimize | export.
#include <CLI11.hpp>

#include "magcath/io.hpp"

int main(int argc, char** argv) {
    CLI::App app{"magcath: magnetic soft catheter simulation and design"};
    app.require_subcommand(1);

    magcath::io::CliOverrides overrides;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string outdir;
    app.add_option("--seed", seed, "override the RNG seed");
    app.add_option("--threads", threads, "evaluation threads (1 = deterministic reference)");
    app.add_option("--outdir", outdir, "override the output directory");

    std::string config_path;
    auto* sim = app.add_subcommand("simulate", "settle an explicit design and export its shape");
    sim->add_option("config", config_path, "run configuration file")->required();

    auto* opt = app.add_subcommand("optimize", "search magnetization directions (and field)");
    opt->add_option("config", config_path, "run configuration file")->required();

    std::string run_dir, what = "centerlines";
    auto* exp = app.add_subcommand("export", "re-emit stored run artifacts to stdout");
    exp->add_option("dir", run_dir, "run directory from a prior command")->required();
    exp->add_option("--what", what, "centerlines | snapshot | trace");

    CLI11_PARSE(app, argc, argv);

    if (app.count("--seed")) overrides.seed = seed;
    if (app.count("--threads")) overrides.threads = threads;
    if (app.count("--outdir")) overrides.outdir = outdir;

    if (sim->parsed()) return magcath::io::cmd_simulate(config_path, overrides);
    if (opt->parsed()) return magcath::io::cmd_optimize(config_path, overrides);
    return magcath::io::cmd_export(run_dir, what);
}
