// Command-line front end: nkscreen <command> [--config FILE] [overrides]
#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "nkscreen/commands.hpp"
#include "nkscreen/errors.hpp"

int main(int argc, char** argv) {
    using namespace nkscreen;

    CLI::App app{"N-k contingency screening: datasets, training, generative screening and evaluation"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::string case_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> parallelism;
    std::optional<std::string> method;
    std::optional<int> budget;
    std::optional<double> delta_miss;
    std::optional<double> lambda;

    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--case", case_path, "MATPOWER case file (overrides the config)");
    app.add_option("--seed", seed, "base seed");
    app.add_option("--out", out, "output directory");
    app.add_option("--parallelism", parallelism, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    app.add_option("--method", method, "screening method")
        ->check(CLI::IsMember({"diffusion", "random", "evgnn-rank", "exhaustive"}));
    app.add_option("--budget", budget, "fixed budget per state (0 = size from the capture bound)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--delta-miss", delta_miss, "miss tolerance for the budget rule");
    app.add_option("--lambda", lambda, "guidance strength");

    const std::pair<const char*, const char*> commands[] = {
        {"dataset", "sample states and label the N-1 dataset"},
        {"train", "train the surrogate and generator, calibrate capture"},
        {"screen", "screen the test states with --method"},
        {"evaluate", "top-m, composition and coverage tables"},
        {"bench", "runtime scaling across k"},
        {"oracle", "exhaustive labeling of the test states"}};
    app.fallthrough();  // options are accepted after the subcommand too
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    CLI11_PARSE(app, argc, argv);

    RunConfig config;
    try {
        if (!config_path.empty()) config = load_config(config_path);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (!case_path.empty()) config.case_path = case_path;
    if (seed) config.seed = *seed;
    if (out) config.out_dir = *out;
    if (parallelism) config.parallelism = *parallelism;
    if (method) config.method = *method;
    if (budget) config.budget = *budget;
    if (delta_miss) config.delta_miss = *delta_miss;
    if (lambda) config.guidance.lambda = *lambda;

    return run_command(app.get_subcommands().front()->get_name(), config, std::cerr, std::cerr);
}
