#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "shortfall/dp.hpp"
#include "shortfall/embed.hpp"
#include "shortfall/errors.hpp"

namespace shortfall {

using ordered_json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitGridEscape = 3;

struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Fully resolved run configuration.  Precedence: CLI flag over config file
/// over built-in default; the resolved state is echoed into every output.
struct RunConfig {
    MarketParams market;
    Frictions frictions;
    PayoffSpec payoff{PayoffKind::call, 1.0, 0.0};
    double x = 0.0;
    int n = 16;
    std::vector<int> n_list;
    std::vector<double> x_list;

    // grid overrides; non-positive fields fall back to defaults
    double u_max = 0.0;
    int grid_u = 0;
    int grid_v = 0;
    int w_candidates = 0;
    int refine_rounds = -1;

    bool seed_set = false;
    std::uint64_t seed = 0;
    int paths = 2000;
    long long fine_steps = 200; ///< fine grid steps per lattice step
    double t_sim_factor = 4.0;

    int threads = 0;
    std::string format = "json";
    std::string out_dir = "out";

    void validate() const {
        market.validate();
        frictions.validate();
        payoff.validate();
        if (n < 1) throw config_error("n must be >= 1");
        if (!(x >= 0.0)) throw config_error("x must be >= 0");
        if (format != "json" && format != "csv")
            throw config_error("format must be json or csv");
        for (std::size_t i = 1; i < n_list.size(); ++i)
            if (n_list[i] <= n_list[i - 1]) throw config_error("n-list must be ascending");
        for (std::size_t i = 1; i < x_list.size(); ++i)
            if (x_list[i] < x_list[i - 1]) throw config_error("x-list must be sorted");
    }
};

namespace detail {

inline std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    const auto end = s.find_last_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw config_error("bad numeric value for " + key + ": " + value);
    }
}

inline long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw config_error("bad integer value for " + key + ": " + value);
    }
}

}  // namespace detail

/// Applies one key = value setting; shared by the config file and the CLI.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_int;
    if (key == "s0") cfg.market.s0 = parse_double(key, value);
    else if (key == "sigma") cfg.market.sigma = parse_double(key, value);
    else if (key == "kappa") cfg.market.kappa = parse_double(key, value);
    else if (key == "maturity" || key == "t") cfg.market.maturity = parse_double(key, value);
    else if (key == "lambda") cfg.frictions.lambda = parse_double(key, value);
    else if (key == "mu") cfg.frictions.mu = parse_double(key, value);
    else if (key == "payoff") cfg.payoff.kind = parse_payoff_kind(value);
    else if (key == "strike") cfg.payoff.strike = parse_double(key, value);
    else if (key == "cap") cfg.payoff.cap = parse_double(key, value);
    else if (key == "path_general") cfg.payoff.path_general = parse_int(key, value) != 0;
    else if (key == "x") cfg.x = parse_double(key, value);
    else if (key == "n") cfg.n = static_cast<int>(parse_int(key, value));
    else if (key == "n_list") {
        cfg.n_list.clear();
        for (const auto& item : detail::split(value, ','))
            cfg.n_list.push_back(static_cast<int>(parse_int(key, detail::trim(item))));
    } else if (key == "x_list") {
        cfg.x_list.clear();
        for (const auto& item : detail::split(value, ','))
            cfg.x_list.push_back(parse_double(key, detail::trim(item)));
    } else if (key == "u_max") cfg.u_max = parse_double(key, value);
    else if (key == "grid_u") cfg.grid_u = static_cast<int>(parse_int(key, value));
    else if (key == "grid_v") cfg.grid_v = static_cast<int>(parse_int(key, value));
    else if (key == "w_candidates") cfg.w_candidates = static_cast<int>(parse_int(key, value));
    else if (key == "refine_rounds") cfg.refine_rounds = static_cast<int>(parse_int(key, value));
    else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
        cfg.seed_set = true;
    } else if (key == "paths") cfg.paths = static_cast<int>(parse_int(key, value));
    else if (key == "fine_steps") cfg.fine_steps = parse_int(key, value);
    else if (key == "t_sim_factor") cfg.t_sim_factor = parse_double(key, value);
    else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, value));
    else if (key == "format") cfg.format = value;
    else if (key == "out") cfg.out_dir = value;
    else throw config_error("unknown configuration key: " + key);
}

/// Plain-text config: one `key = value` per line, # starts a comment.
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string text = detail::trim(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(line_no) + ": expected key = value");
        apply_setting(cfg, detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)));
    }
}

inline GridSpec resolve_grid(const RunConfig& cfg, const LatticeSpec& lat) {
    GridSpec grid = default_grid(cfg.market, lat, cfg.payoff, cfg.frictions);
    if (cfg.u_max > 0.0) grid.u_max = cfg.u_max;
    if (cfg.grid_u > 0) grid.n_u = cfg.grid_u;
    if (cfg.grid_v > 0) grid.n_v = cfg.grid_v;
    if (cfg.w_candidates > 0) grid.w_candidates = cfg.w_candidates;
    if (cfg.refine_rounds >= 0) grid.refine_rounds = cfg.refine_rounds;
    return grid;
}

inline ordered_json config_json(const RunConfig& cfg) {
    ordered_json j;
    j["s0"] = cfg.market.s0;
    j["sigma"] = cfg.market.sigma;
    j["kappa"] = cfg.market.kappa;
    j["maturity"] = cfg.market.maturity;
    j["lambda"] = cfg.frictions.lambda;
    j["mu"] = cfg.frictions.mu;
    j["payoff"] = to_string(cfg.payoff.kind);
    j["strike"] = cfg.payoff.strike;
    j["cap"] = cfg.payoff.cap;
    j["path_general"] = cfg.payoff.path_general;
    j["x"] = cfg.x;
    j["n"] = cfg.n;
    j["n_list"] = cfg.n_list;
    j["x_list"] = cfg.x_list;
    j["u_max"] = cfg.u_max;
    j["grid_u"] = cfg.grid_u;
    j["grid_v"] = cfg.grid_v;
    j["w_candidates"] = cfg.w_candidates;
    j["refine_rounds"] = cfg.refine_rounds;
    if (cfg.seed_set) j["seed"] = cfg.seed;
    j["paths"] = cfg.paths;
    j["fine_steps"] = cfg.fine_steps;
    j["t_sim_factor"] = cfg.t_sim_factor;
    j["threads"] = cfg.threads;
    j["format"] = cfg.format;
    j["out"] = cfg.out_dir;
    return j;
}

inline ordered_json grid_json(const GridSpec& g) {
    ordered_json j;
    j["u_max"] = g.u_max;
    j["n_u"] = g.n_u;
    j["v_min"] = g.v_min;
    j["v_max"] = g.v_max;
    j["n_v"] = g.n_v;
    j["w_candidates"] = g.w_candidates;
    j["refine_rounds"] = g.refine_rounds;
    j["v_grading"] = g.v_grading;
    return j;
}

namespace detail {

inline std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline void csv_config_header(std::ostream& os, const RunConfig& cfg, const std::string& command) {
    os << "# format_version = " << kFormatVersion << "\n";
    os << "# command = " << command << "\n";
    const ordered_json echo = config_json(cfg);
    for (const auto& [key, value] : echo.items())
        os << "# " << key << " = " << value.dump() << "\n";
}

inline void write_output(const RunConfig& cfg, const std::string& filename,
                         const std::string& content, bool primary_table) {
    if (cfg.out_dir == "-") {
        // data on stdout only for the primary table in csv mode
        if (primary_table && cfg.format == "csv") std::cout << content;
        return;
    }
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path path = std::filesystem::path(cfg.out_dir) / filename;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

}  // namespace detail

inline SolveOptions solve_options(const RunConfig& cfg, bool retain_policy = false) {
    SolveOptions opt;
    opt.threads = cfg.threads;
    opt.retain_policy = retain_policy;
    return opt;
}

/// risk: R_n(x, lambda, mu) as a JSON report.
inline std::string risk_report_text(const RunConfig& cfg) {
    const LatticeSpec lat = calibrate(cfg.market, cfg.n);
    const GridSpec grid = resolve_grid(cfg, lat);
    const RiskReport rep =
        shortfall_risk(cfg.market, lat, cfg.payoff, cfg.frictions, cfg.x, grid,
                       solve_options(cfg));
    ordered_json j;
    j["format_version"] = kFormatVersion;
    j["command"] = "risk";
    j["config"] = config_json(cfg);
    j["grid"] = grid_json(grid);
    ordered_json lattice;
    lattice["n"] = lat.n;
    lattice["delta"] = lat.delta;
    lattice["a"] = lat.a;
    lattice["b"] = lat.b;
    lattice["p_up"] = lat.p_up;
    j["lattice"] = lattice;
    ordered_json result;
    result["risk"] = rep.risk;
    result["x"] = rep.x;
    result["snell0"] = rep.snell0;
    result["cash_dominated"] = rep.cash_dominated;
    result["x_clamped"] = rep.x_clamped;
    ordered_json diag;
    diag["max_payoff"] = rep.diag.max_payoff;
    diag["max_monotone_clip"] = rep.diag.max_monotone_clip;
    diag["boxed_scans"] = rep.diag.boxed_scans;
    result["diagnostics"] = diag;
    j["result"] = result;
    return j.dump(2) + "\n";
}

/// snell: the frictionless zero-capital companion value.
inline std::string snell_report_text(const RunConfig& cfg) {
    const LatticeSpec lat = calibrate(cfg.market, cfg.n);
    const double snell = snell_value(cfg.market, lat, cfg.payoff);
    ordered_json j;
    j["format_version"] = kFormatVersion;
    j["command"] = "snell";
    j["config"] = config_json(cfg);
    ordered_json result;
    result["snell"] = snell;
    result["n"] = cfg.n;
    j["result"] = result;
    return j.dump(2) + "\n";
}

/// converge: R_n across an ascending n-list with successive differences and
/// a half-resolution grid residual per row.
inline std::string converge_table_text(const RunConfig& cfg) {
    if (cfg.n_list.size() < 2) throw config_error("converge needs an ascending n-list");
    std::ostringstream os;
    detail::csv_config_header(os, cfg, "converge");
    os << "n,risk,diff_prev,grid_residual\n";
    double prev = 0.0;
    bool have_prev = false;
    for (int n : cfg.n_list) {
        const LatticeSpec lat = calibrate(cfg.market, n);
        const GridSpec grid = resolve_grid(cfg, lat);
        GridSpec half = grid;
        half.n_u = std::max(grid.n_u / 2 + 1, 9);
        half.n_v = std::max(grid.n_v / 2 + 1, 9);
        const RiskReport rep = shortfall_risk(cfg.market, lat, cfg.payoff, cfg.frictions,
                                              cfg.x, grid, solve_options(cfg));
        const RiskReport rough = shortfall_risk(cfg.market, lat, cfg.payoff, cfg.frictions,
                                                cfg.x, half, solve_options(cfg));
        os << n << ',' << detail::fmt_num(rep.risk) << ',';
        os << (have_prev ? detail::fmt_num(std::abs(rep.risk - prev)) : std::string(""));
        os << ',' << detail::fmt_num(std::abs(rep.risk - rough.risk)) << "\n";
        prev = rep.risk;
        have_prev = true;
    }
    return os.str();
}

/// frontier: sampled risk curve with detected breakpoints.
inline std::string frontier_table_text(const RunConfig& cfg) {
    if (cfg.x_list.size() < 2) throw config_error("frontier needs a sorted x-list");
    const LatticeSpec lat = calibrate(cfg.market, cfg.n);
    const GridSpec grid = resolve_grid(cfg, lat);
    const SolveResult sol =
        solve(cfg.market, lat, cfg.payoff, cfg.frictions, grid, solve_options(cfg));
    const RiskCurve curve = risk_curve(sol, cfg.x_list);
    std::ostringstream os;
    detail::csv_config_header(os, cfg, "frontier");
    os << "x,risk,is_breakpoint\n";
    std::size_t bp = 0;
    for (std::size_t i = 0; i < curve.x.size(); ++i) {
        bool is_bp = false;
        if (bp < curve.breakpoints.size() && curve.breakpoints[bp] == curve.x[i]) {
            is_bp = true;
            ++bp;
        }
        os << detail::fmt_num(curve.x[i]) << ',' << detail::fmt_num(curve.risk[i]) << ','
           << (is_bp ? 1 : 0) << "\n";
    }
    return os.str();
}

/// oracle: side-by-side DP and brute-force values on a tiny lattice.
inline std::string oracle_report_text(const RunConfig& cfg) {
    if (cfg.n > 3) throw config_error("oracle requires n <= 3");
    const LatticeSpec lat = calibrate(cfg.market, cfg.n);
    const GridSpec grid = resolve_grid(cfg, lat);
    const int w_grid = cfg.w_candidates > 0 ? cfg.w_candidates : 800;
    const SolveResult sol =
        solve(cfg.market, lat, cfg.payoff, cfg.frictions, grid, solve_options(cfg));
    const double dp = sol.read_risk(cfg.x);
    const double oracle = oracle_bruteforce(cfg.market, lat, cfg.payoff, cfg.frictions, cfg.x,
                                            w_grid, cfg.threads);
    ordered_json j;
    j["format_version"] = kFormatVersion;
    j["command"] = "oracle";
    j["config"] = config_json(cfg);
    j["grid"] = grid_json(grid);
    ordered_json result;
    result["dp"] = dp;
    result["oracle"] = oracle;
    result["w_grid"] = w_grid;
    result["abs_gap"] = std::abs(dp - oracle);
    result["rel_gap"] = std::abs(dp - oracle) / (1.0 + oracle);
    j["result"] = result;
    return j.dump(2) + "\n";
}

struct SimulateOutputs {
    std::string diagnostics_csv;
    std::string bracket_json;
};

/// simulate: embedding diagnostics across the n-list plus the shortfall
/// bracket and a lift-identity sweep at the configured n.
inline SimulateOutputs simulate_outputs(const RunConfig& cfg) {
    if (!cfg.seed_set) throw config_error("simulate requires a seed");
    std::vector<int> ns = cfg.n_list;
    if (ns.empty()) ns = {cfg.n};
    const auto rows =
        convergence_diagnostics(cfg.market, cfg.payoff, ns, cfg.fine_steps, cfg.paths, cfg.seed,
                                cfg.t_sim_factor, cfg.threads);
    std::ostringstream os;
    detail::csv_config_header(os, cfg, "simulate");
    os << "n,estimator,estimate,std_error,n_effective\n";
    for (const auto& row : rows) {
        os << row.n << ",sup_price_gap," << detail::fmt_num(row.s_gap.mean) << ','
           << detail::fmt_num(row.s_gap.std_error) << ',' << row.completed << "\n";
        os << row.n << ",max_theta_gap," << detail::fmt_num(row.theta_gap.mean) << ','
           << detail::fmt_num(row.theta_gap.std_error) << ',' << row.completed << "\n";
        os << row.n << ",sup_payoff_gap," << detail::fmt_num(row.payoff_gap.mean) << ','
           << detail::fmt_num(row.payoff_gap.std_error) << ',' << row.completed << "\n";
    }

    // bracket + lift sweep at the configured n
    const LatticeSpec lat = calibrate(cfg.market, cfg.n);
    const GridSpec grid = resolve_grid(cfg, lat);
    const SolveResult sol = solve(cfg.market, lat, cfg.payoff, cfg.frictions, grid,
                                  solve_options(cfg, /*retain_policy=*/true));
    const SimConfig sim = make_sim_config(cfg.market, cfg.n, cfg.fine_steps, cfg.paths, cfg.seed,
                                          cfg.t_sim_factor);
    const BracketReport bracket = shortfall_bracket(sol, cfg.x, sim, cfg.threads);

    long long lift_checked = 0, lift_violations = 0;
    const double dt = sim.t_sim / static_cast<double>(sim.fine_steps);
    for (int pi = 0; pi < sim.n_paths; ++pi) {
        const auto w = simulate_driver(cfg.market, sim, pi);
        const CrossingRecord rec = extract_crossings(w, dt, cfg.n, cfg.market);
        if (!rec.completed) continue;
        const StrategyPath strat = extract_strategy(sol, cfg.x, rec.signs);
        try {
            lift_strategy(strat.transfers, rec, cfg.x, lat, cfg.frictions);
        } catch (const std::logic_error&) {
            ++lift_violations;
        }
        ++lift_checked;
    }

    ordered_json j;
    j["format_version"] = kFormatVersion;
    j["command"] = "simulate";
    j["config"] = config_json(cfg);
    j["grid"] = grid_json(grid);
    ordered_json br;
    br["n"] = bracket.n;
    br["x"] = bracket.x;
    br["r_n"] = bracket.r_n;
    br["lower"] = bracket.lower;
    br["lower_se"] = bracket.lower_se;
    br["payoff_gap"] = bracket.payoff_gap;
    br["upper_proxy"] = bracket.upper_proxy;
    br["upper_is_heuristic"] = bracket.upper_is_heuristic;
    br["completed"] = bracket.completed;
    br["dropped"] = bracket.dropped;
    ordered_json rules = ordered_json::array();
    for (const auto& rule : bracket.rules) {
        ordered_json r;
        r["rule"] = rule.name;
        r["shortfall"] = rule.shortfall.mean;
        r["std_error"] = rule.shortfall.std_error;
        rules.push_back(r);
    }
    br["rules"] = rules;
    j["bracket"] = br;
    ordered_json lift;
    lift["records_checked"] = lift_checked;
    lift["violations"] = lift_violations;
    j["lift_identity"] = lift;
    SimulateOutputs out;
    out.diagnostics_csv = os.str();
    out.bracket_json = j.dump(2) + "\n";
    return out;
}

namespace detail {

/// Flat CSV rendition of a JSON report's result block, for `--format csv`
/// runs writing to stdout.
inline std::string csv_rendition(const RunConfig& cfg, const std::string& command,
                                 const std::string& json_text) {
    const ordered_json j = ordered_json::parse(json_text);
    std::ostringstream os;
    csv_config_header(os, cfg, command);
    os << "key,value\n";
    if (j.contains("result")) {
        for (const auto& [key, value] : j.at("result").items())
            if (!value.is_structured()) os << key << ',' << value.dump() << "\n";
    }
    return os.str();
}

}  // namespace detail

/// Runs one subcommand, writes its outputs, and maps failures onto the
/// documented exit codes (2 config, 3 grid escape).
inline int run_command(const std::string& command, const RunConfig& cfg,
                       std::ostream& err = std::cerr) {
    try {
        cfg.validate();
        auto emit_json = [&cfg, &command](const std::string& filename, const std::string& text) {
            if (cfg.out_dir == "-" && cfg.format == "csv") {
                std::cout << detail::csv_rendition(cfg, command, text);
                return;
            }
            detail::write_output(cfg, filename, text, true);
        };
        if (command == "risk") {
            emit_json("risk.json", risk_report_text(cfg));
        } else if (command == "snell") {
            emit_json("snell.json", snell_report_text(cfg));
        } else if (command == "converge") {
            detail::write_output(cfg, "converge.csv", converge_table_text(cfg), true);
        } else if (command == "frontier") {
            detail::write_output(cfg, "frontier.csv", frontier_table_text(cfg), true);
        } else if (command == "oracle") {
            emit_json("oracle.json", oracle_report_text(cfg));
        } else if (command == "simulate") {
            const SimulateOutputs out = simulate_outputs(cfg);
            detail::write_output(cfg, "simulate_diagnostics.csv", out.diagnostics_csv, true);
            detail::write_output(cfg, "simulate_bracket.json", out.bracket_json, false);
        } else {
            throw config_error("unknown command: " + command);
        }
        return kExitOk;
    } catch (const grid_escape_error& e) {
        err << "grid escape: " << e.what() << "\n";
        return kExitGridEscape;
    } catch (const config_error& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace shortfall
