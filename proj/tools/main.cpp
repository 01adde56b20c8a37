#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "shortfall/cli.hpp"

namespace {

using Assignments = std::vector<std::pair<std::string, std::string>>;

void add_common_options(CLI::App* cmd, Assignments& out, std::string& config_path) {
    cmd->add_option("--config", config_path, "key = value configuration file");
    auto opt = [cmd, &out](const std::string& flag, const std::string& key,
                           const std::string& help) {
        cmd->add_option_function<std::string>(
               flag, [key, &out](const std::string& v) { out.emplace_back(key, v); }, help)
            ->expected(1);
    };
    opt("--s0", "s0", "initial stock price");
    opt("--sigma", "sigma", "volatility per sqrt(year)");
    opt("--kappa", "kappa", "drift parameter");
    opt("--maturity,--t", "maturity", "maturity in years");
    opt("--lambda", "lambda", "purchase cost rate");
    opt("--mu", "mu", "sale cost rate");
    opt("--payoff", "payoff", "call|put|capped-call|lookback-max|russian");
    opt("--strike", "strike", "strike (call/put/capped-call)");
    opt("--cap", "cap", "cap (capped-call)");
    opt("--x", "x", "initial capital");
    opt("--n", "n", "lattice step count");
    opt("--n-list", "n_list", "comma-separated ascending lattice sizes");
    opt("--x-list", "x_list", "comma-separated sorted capitals");
    opt("--u-max", "u_max", "override the wealth-grid upper bound");
    opt("--grid-u", "grid_u", "wealth-grid point count");
    opt("--grid-v", "grid_v", "position-grid point count");
    opt("--w-candidates", "w_candidates", "inner-search scan segments");
    opt("--refine-rounds", "refine_rounds", "inner-search refinement rounds");
    opt("--seed", "seed", "Monte Carlo seed");
    opt("--paths", "paths", "Monte Carlo path count");
    opt("--fine-steps", "fine_steps", "simulation grid steps per lattice step");
    opt("--t-sim-factor", "t_sim_factor", "simulation horizon as a multiple of T");
    opt("--threads", "threads", "engine parallelism cap (0 = hardware)");
    opt("--format", "format", "json|csv");
    opt("--out", "out", "output directory, or - for stdout");
    cmd->add_flag_function(
        "--path-general",
        [&out](std::int64_t count) {
            if (count > 0) out.emplace_back("path_general", "1");
        },
        "disable the Markov reduction (full-tree DP)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shortfall risk under proportional transaction costs on binomial lattices"};
    app.require_subcommand(1);

    const std::vector<std::string> commands{"risk", "converge", "frontier",
                                            "simulate", "oracle", "snell"};
    const std::vector<std::string> descriptions{
        "minimal shortfall risk R_n(x) via backward dynamic programming",
        "R_n across an ascending n-list with successive differences",
        "the risk frontier x -> R_n(x) as CSV",
        "Skorohod-embedding diagnostics and the shortfall bracket",
        "DP versus brute-force search on a tiny lattice (n <= 3)",
        "physical-measure optimal-stopping value of the payoff"};

    std::vector<Assignments> assignments(commands.size());
    std::vector<std::string> config_paths(commands.size());
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        CLI::App* sub = app.add_subcommand(commands[i], descriptions[i]);
        add_common_options(sub, assignments[i], config_paths[i]);
        subs.push_back(sub);
    }

    CLI11_PARSE(app, argc, argv);

    for (std::size_t i = 0; i < commands.size(); ++i) {
        if (!subs[i]->parsed()) continue;
        shortfall::RunConfig cfg;
        try {
            std::string config_path = config_paths[i];
            if (config_path.empty()) {
                if (const char* env = std::getenv("SHORTFALL_CONFIG")) config_path = env;
            }
            if (!config_path.empty()) shortfall::apply_config_file(cfg, config_path);
            for (const auto& [key, value] : assignments[i])
                shortfall::apply_setting(cfg, key, value);
        } catch (const std::exception& e) {
            std::cerr << "configuration error: " << e.what() << "\n";
            return shortfall::kExitConfig;
        }
        return shortfall::run_command(commands[i], cfg);
    }
    return shortfall::kExitConfig;
}
