#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "shortfall/cli.hpp"

using namespace shortfall;
namespace fs = std::filesystem;

namespace {

RunConfig base_config() {
    RunConfig cfg;
    cfg.market = {1.0, 0.2, 0.0, 1.0};
    cfg.frictions = {0.01, 0.01};
    cfg.payoff = {PayoffKind::call, 1.0, 0.0};
    cfg.n = 4;
    cfg.x = 0.03;
    cfg.out_dir = "-"; // no files from unit tests unless asked
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("shortfall_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int counter() {
        static int c = 0;
        return ++c;
    }
};

}  // namespace

TEST_CASE("config file parsing and precedence") {
    TempDir tmp;
    const fs::path file = tmp.path / "run.conf";
    {
        std::ofstream out(file);
        out << "# benchmark configuration\n";
        out << "s0 = 1.0\n";
        out << "sigma = 0.25\n";
        out << "payoff = capped-call\n";
        out << "strike = 0.9\n";
        out << "cap = 0.3\n";
        out << "x = 0.125\n";
        out << "n_list = 2, 4, 8\n";
    }
    RunConfig cfg;
    apply_config_file(cfg, file.string());
    CHECK(cfg.market.sigma == 0.25);
    CHECK(cfg.payoff.kind == PayoffKind::capped_call);
    CHECK(cfg.x == 0.125);
    REQUIRE(cfg.n_list == std::vector<int>{2, 4, 8});
    // a CLI flag wins over the file
    apply_setting(cfg, "x", "0.5");
    CHECK(cfg.x == 0.5);

    CHECK_THROWS_AS(apply_setting(cfg, "nonsense", "1"), config_error);
    CHECK_THROWS_AS(apply_setting(cfg, "x", "abc"), config_error);
    CHECK_THROWS_AS(apply_config_file(cfg, (tmp.path / "missing.conf").string()), config_error);
    {
        std::ofstream out(file);
        out << "just some words\n";
    }
    CHECK_THROWS_AS(apply_config_file(cfg, file.string()), config_error);
}

TEST_CASE("risk reports are byte-identical across runs") {
    const RunConfig cfg = base_config();
    const std::string a = risk_report_text(cfg);
    const std::string b = risk_report_text(cfg);
    REQUIRE(a == b);
    CHECK(a.find("\"format_version\": 1") != std::string::npos);
    CHECK(a.find("\"command\": \"risk\"") != std::string::npos);
    CHECK(a.find("\"sigma\": 0.2") != std::string::npos);
}

TEST_CASE("risk at zero capital equals the snell companion") {
    RunConfig cfg = base_config();
    cfg.x = 0.0;
    const ordered_json risk = ordered_json::parse(risk_report_text(cfg));
    const ordered_json snell = ordered_json::parse(snell_report_text(cfg));
    const double r = risk["result"]["risk"].get<double>();
    const double s = snell["result"]["snell"].get<double>();
    CHECK(std::abs(r - s) <= 1e-9);
    CHECK(risk["result"]["snell0"].get<double>() == Catch::Approx(s).margin(1e-12));
}

TEST_CASE("capped claim at its cap reports zero risk") {
    RunConfig cfg = base_config();
    cfg.payoff = {PayoffKind::capped_call, 0.9, 0.2};
    cfg.x = 0.2;
    const ordered_json rep = ordered_json::parse(risk_report_text(cfg));
    CHECK(rep["result"]["risk"].get<double>() == 0.0);
    CHECK(rep["result"]["cash_dominated"].get<bool>());
}

TEST_CASE("converge table: null claim rows vanish, frictions raise rows") {
    RunConfig cfg = base_config();
    cfg.n_list = {2, 4};
    cfg.x = 0.02;

    RunConfig nothing = cfg;
    nothing.payoff = {PayoffKind::call, 1e6, 0.0};
    const std::string table = converge_table_text(nothing);
    std::istringstream in(table);
    std::string line;
    int data_rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 'n') continue;
        ++data_rows;
        CHECK(line.find(",0,") != std::string::npos);
    }
    CHECK(data_rows == 2);

    auto risks = [](const std::string& text) {
        std::vector<double> out;
        std::istringstream is(text);
        std::string row;
        while (std::getline(is, row)) {
            if (row.empty() || row[0] == '#' || row[0] == 'n') continue;
            const auto c1 = row.find(',');
            const auto c2 = row.find(',', c1 + 1);
            out.push_back(std::stod(row.substr(c1 + 1, c2 - c1 - 1)));
        }
        return out;
    };
    const std::vector<double> base = risks(converge_table_text(cfg));
    RunConfig doubled_costs = cfg;
    doubled_costs.frictions = {0.02, 0.02};
    const std::vector<double> heavy = risks(converge_table_text(doubled_costs));
    REQUIRE(base.size() == heavy.size());
    for (std::size_t i = 0; i < base.size(); ++i) REQUIRE(heavy[i] >= base[i] - 1e-9);
}

TEST_CASE("frontier table is monotone and flags the kink region") {
    RunConfig cfg = base_config();
    cfg.payoff = {PayoffKind::capped_call, 0.9, 0.2};
    cfg.x_list.clear();
    for (int i = 0; i <= 60; ++i) cfg.x_list.push_back(0.25 * i / 60.0);
    const std::string table = frontier_table_text(cfg);
    std::istringstream in(table);
    std::string line;
    double prev = 1e300;
    double last = 0.0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 'x') continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const double risk = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        REQUIRE(risk <= prev + 1e-12);
        prev = risk;
        last = risk;
    }
    CHECK(last == 0.0);
}

TEST_CASE("oracle command agrees with the solver and guards n") {
    RunConfig cfg = base_config();
    cfg.n = 2;
    cfg.x = 0.04;
    const ordered_json rep = ordered_json::parse(oracle_report_text(cfg));
    const double gap = rep["result"]["rel_gap"].get<double>();
    CHECK(gap <= 1e-3);

    RunConfig big = cfg;
    big.n = 4;
    CHECK_THROWS_AS(oracle_report_text(big), config_error);
    std::ostringstream err;
    CHECK(run_command("oracle", big, err) == kExitConfig);
}

TEST_CASE("simulate requires a seed and reports a clean lift sweep") {
    RunConfig cfg = base_config();
    cfg.n = 4;
    cfg.paths = 60;
    cfg.fine_steps = 120;
    std::ostringstream err;
    CHECK(run_command("simulate", cfg, err) == kExitConfig);
    CHECK(err.str().find("seed") != std::string::npos);

    cfg.seed = 987;
    cfg.seed_set = true;
    const SimulateOutputs out = simulate_outputs(cfg);
    CHECK(out.diagnostics_csv.find("sup_price_gap") != std::string::npos);
    CHECK(out.diagnostics_csv.find("max_theta_gap") != std::string::npos);
    const ordered_json bracket = ordered_json::parse(out.bracket_json);
    CHECK(bracket["lift_identity"]["violations"].get<long long>() == 0);
    CHECK(bracket["lift_identity"]["records_checked"].get<long long>() > 0);
    CHECK(bracket["bracket"]["lower"].get<double>() <=
          bracket["bracket"]["upper_proxy"].get<double>() + 1e-12);
}

TEST_CASE("exit codes: config errors and grid escapes") {
    std::ostringstream err;
    RunConfig bad = base_config();
    bad.market.sigma = -1.0;
    CHECK(run_command("risk", bad, err) == kExitConfig);

    RunConfig escape = base_config();
    escape.u_max = 1e-3; // cannot represent the largest payoff
    CHECK(run_command("risk", escape, err) == kExitGridEscape);

    RunConfig fine = base_config();
    CHECK(run_command("nonsense", fine, err) == kExitConfig);
}

TEST_CASE("outputs land in the requested directory with config echo") {
    TempDir tmp;
    RunConfig cfg = base_config();
    cfg.out_dir = (tmp.path / "results").string();
    std::ostringstream err;
    REQUIRE(run_command("risk", cfg, err) == kExitOk);
    const std::string text = slurp(fs::path(cfg.out_dir) / "risk.json");
    REQUIRE_FALSE(text.empty());
    const ordered_json j = ordered_json::parse(text);
    CHECK(j["config"]["payoff"].get<std::string>() == "call");
    CHECK(j["config"]["out"].get<std::string>() == cfg.out_dir);
    CHECK(j["grid"]["n_u"].get<int>() > 0);
}
