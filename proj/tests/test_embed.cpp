#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "shortfall/embed.hpp"

using namespace shortfall;

namespace {

MarketParams benchmark_market() { return {1.0, 0.2, 0.0, 1.0}; }

}  // namespace

TEST_CASE("driver starts at log-price over sigma and is reproducible") {
    MarketParams mp{1.5, 0.3, 0.02, 1.0};
    SimConfig cfg{512, 1.0, 4, 99};
    const auto a = simulate_driver(mp, cfg, 7);
    const auto b = simulate_driver(mp, cfg, 7);
    const auto c = simulate_driver(mp, cfg, 8);
    CHECK(a[0] == std::log(mp.s0) / mp.sigma);
    REQUIRE(a == b);
    REQUIRE(a != c);
}

TEST_CASE("driver increments match the Brownian law") {
    // kappa = sigma^2/2 kills the drift of W*
    MarketParams mp{1.0, 0.2, 0.02, 1.0};
    SimConfig cfg{256, 1.0, 10000, 4242};
    std::vector<double> ends(static_cast<std::size_t>(cfg.n_paths));
    for (int i = 0; i < cfg.n_paths; ++i) {
        const auto path = simulate_driver(mp, cfg, i);
        ends[static_cast<std::size_t>(i)] = path.back() - path.front();
    }
    const MeanStdErr m = mean_stderr(ends);
    CHECK(std::abs(m.mean) <= 3.0 * m.std_error);
    std::vector<double> sq(ends.size());
    for (std::size_t i = 0; i < ends.size(); ++i) sq[i] = ends[i] * ends[i];
    const double var = pairwise_sum(sq) / static_cast<double>(sq.size());
    CHECK(var == Catch::Approx(cfg.t_sim).epsilon(0.05));
}

TEST_CASE("exp(sigma W*) reproduces the price equation") {
    MarketParams mp{2.0, 0.25, 0.07, 1.0};
    SimConfig cfg{256, 2.0, 1, 11};
    const auto wstar = simulate_driver(mp, cfg, 0);
    const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
    for (std::size_t j = 0; j < wstar.size(); j += 17) {
        const double t = static_cast<double>(j) * dt;
        // recover the plain Brownian path and apply the price equation
        const double wt = wstar[j] - wstar[0] - (mp.kappa / mp.sigma - 0.5 * mp.sigma) * t;
        const double via_eq =
            mp.s0 * std::exp(mp.sigma * wt + (mp.kappa - 0.5 * mp.sigma * mp.sigma) * t);
        const double via_wstar = std::exp(mp.sigma * wstar[j]);
        REQUIRE(via_wstar == Catch::Approx(via_eq).epsilon(1e-12));
    }
}

TEST_CASE("crossings of a deterministic ramp") {
    MarketParams mp{1.0, 0.2, 0.0, 1.0};
    const int n = 4;
    const long long m = 1000;
    const double dt = 0.005;
    const double h = std::sqrt(mp.maturity / n);
    const double c = 1.2; // drift per unit time
    std::vector<double> path(static_cast<std::size_t>(m) + 1);
    for (long long j = 0; j <= m; ++j)
        path[static_cast<std::size_t>(j)] =
            std::log(mp.s0) / mp.sigma + c * static_cast<double>(j) * dt;
    const CrossingRecord rec = extract_crossings(path, dt, n, mp);
    REQUIRE(rec.completed);
    REQUIRE(rec.signs.size() == 4);
    for (int s : rec.signs) CHECK(s == 1);
    for (int k = 1; k <= n; ++k) {
        const double exact = static_cast<double>(k) * h / c;
        const double rounded = dt * std::ceil(exact / dt - 1e-9);
        CHECK(rec.theta[static_cast<std::size_t>(k)] ==
              Catch::Approx(rounded).margin(1e-12));
    }
    // prices are the snapped lattice levels
    for (int k = 1; k <= n; ++k)
        CHECK(rec.prices[static_cast<std::size_t>(k)] ==
              Catch::Approx(mp.s0 * std::exp(mp.sigma * h * k)).epsilon(1e-12));
}

TEST_CASE("crossing resolution guard") {
    MarketParams mp = benchmark_market();
    std::vector<double> path(101, 0.0);
    CHECK_THROWS_AS(extract_crossings(path, 0.01, 4, mp), std::invalid_argument);
}

TEST_CASE("crossing price ratios are exact lattice moves") {
    MarketParams mp = benchmark_market();
    const int n = 8;
    const SimConfig cfg = make_sim_config(mp, n, 200, 50, 314);
    const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
    const LatticeSpec lat = calibrate(mp, n);
    for (int pi = 0; pi < cfg.n_paths; ++pi) {
        const auto w = simulate_driver(mp, cfg, pi);
        const CrossingRecord rec = extract_crossings(w, dt, n, mp);
        for (std::size_t k = 0; k + 1 < rec.prices.size(); ++k) {
            const double ratio = rec.prices[k + 1] / rec.prices[k];
            const double target = rec.signs[k] > 0 ? 1.0 + lat.b : 1.0 - lat.a;
            REQUIRE(std::abs(ratio / target - 1.0) <= 1e-9);
        }
        for (std::size_t k = 1; k < rec.theta.size(); ++k)
            REQUIRE(rec.theta[k] > rec.theta[k - 1]);
    }
}

TEST_CASE("crossing signs follow the lattice up-probability") {
    MarketParams mp = benchmark_market();
    const int n = 8;
    const SimConfig cfg = make_sim_config(mp, n, 200, 2000, 2718);
    const SignLawReport rep = sign_law(mp, n, cfg);
    const double freq = static_cast<double>(rep.ups) / static_cast<double>(rep.total);
    const double se = std::sqrt(rep.expected_p * (1.0 - rep.expected_p) /
                                static_cast<double>(rep.total));
    CHECK(std::abs(freq - rep.expected_p) <= 3.0 * se);
}

TEST_CASE("lift identity holds on every completed record") {
    MarketParams mp = benchmark_market();
    const int n = 8;
    const LatticeSpec lat = calibrate(mp, n);
    Frictions f{0.01, 0.02};
    const SimConfig cfg = make_sim_config(mp, n, 150, 200, 5150);
    const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
    std::mt19937 gen(61);
    std::uniform_real_distribution<double> uni(-0.3, 0.5);
    int checked = 0;
    for (int pi = 0; pi < cfg.n_paths; ++pi) {
        const auto w = simulate_driver(mp, cfg, pi);
        const CrossingRecord rec = extract_crossings(w, dt, n, mp);
        if (!rec.completed) continue;
        std::vector<double> transfers(static_cast<std::size_t>(n));
        for (auto& t : transfers) t = uni(gen);
        const std::vector<double> lifted = lift_strategy(transfers, rec, 1.0, lat, f);
        const WealthPath binom = discrete_wealth_path(1.0, transfers, rec.signs, lat, f);
        for (std::size_t k = 0; k < lifted.size(); ++k)
            REQUIRE(lifted[k] == binom.wealth[k]); // bit-exact by construction
        ++checked;
    }
    REQUIRE(checked > 150);
}

TEST_CASE("lift refuses incomplete records and mismatched transfers") {
    MarketParams mp = benchmark_market();
    const int n = 8;
    const LatticeSpec lat = calibrate(mp, n);
    Frictions f{0.01, 0.01};
    CrossingRecord rec;
    rec.completed = false;
    std::vector<double> transfers(static_cast<std::size_t>(n), 0.0);
    CHECK_THROWS_AS(lift_strategy(transfers, rec, 1.0, lat, f), incomplete_record_error);

    const SimConfig cfg = make_sim_config(mp, n, 150, 50, 5151);
    const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
    for (int pi = 0; pi < cfg.n_paths; ++pi) {
        const auto w = simulate_driver(mp, cfg, pi);
        const CrossingRecord complete = extract_crossings(w, dt, n, mp);
        if (!complete.completed) continue;
        std::vector<double> shorter(static_cast<std::size_t>(n) - 1, 0.0);
        CHECK_THROWS_AS(lift_strategy(shorter, complete, 1.0, lat, f), std::invalid_argument);
        break;
    }
}

TEST_CASE("embedding estimates shrink with n") {
    MarketParams mp = benchmark_market();
    PayoffSpec payoff{PayoffKind::call, 1.0, 0.0};
    const std::vector<int> ns{4, 16};
    const auto rows = convergence_diagnostics(mp, payoff, ns, 150, 500, 777);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].s_gap.mean < rows[0].s_gap.mean);
    CHECK(rows[1].theta_gap.mean < rows[0].theta_gap.mean);
    CHECK(rows[0].completed + rows[0].dropped == 500);
}

TEST_CASE("constant payoffs have no payoff gap") {
    MarketParams mp = benchmark_market();
    const int n = 4;
    const LatticeSpec lat = calibrate(mp, n);
    // capped call with zero strike and a cap below the lattice price floor
    // pays the cap everywhere
    PayoffSpec payoff{PayoffKind::capped_call, 0.0,
                      0.5 * mp.s0 * std::pow(1.0 - lat.a, n)};
    const auto rows = convergence_diagnostics(mp, payoff, std::vector<int>{n}, 120, 200, 808);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].payoff_gap.mean == 0.0);
}

TEST_CASE("theta estimates stabilize as the detection grid refines") {
    MarketParams mp = benchmark_market();
    PayoffSpec payoff{PayoffKind::call, 1.0, 0.0};
    const std::vector<int> ns{4};
    const auto coarse = convergence_diagnostics(mp, payoff, ns, 100, 2000, 999);
    const auto mid = convergence_diagnostics(mp, payoff, ns, 400, 2000, 999);
    const auto fine = convergence_diagnostics(mp, payoff, ns, 1600, 2000, 999);
    const double d1 = std::abs(coarse[0].theta_gap.mean - mid[0].theta_gap.mean);
    const double d2 = std::abs(mid[0].theta_gap.mean - fine[0].theta_gap.mean);
    const double se = mid[0].theta_gap.std_error + fine[0].theta_gap.std_error;
    CHECK(d2 <= d1 + 2.0 * se);
}

TEST_CASE("incomplete-record fraction falls as the horizon grows") {
    MarketParams mp = benchmark_market();
    PayoffSpec payoff{PayoffKind::call, 1.0, 0.0};
    const std::vector<int> ns{8};
    const auto short_h = convergence_diagnostics(mp, payoff, ns, 150, 400, 1212, 1.0);
    const auto long_h = convergence_diagnostics(mp, payoff, ns, 150, 400, 1212, 4.0);
    CHECK(long_h[0].dropped < short_h[0].dropped);
}

TEST_CASE("bracket of a null claim collapses to zero") {
    MarketParams mp = benchmark_market();
    const int n = 4;
    const LatticeSpec lat = calibrate(mp, n);
    PayoffSpec payoff{PayoffKind::call, 10.0 * mp.s0 * std::exp(lat.delta * n), 0.0};
    Frictions f{0.01, 0.01};
    GridSpec grid = default_grid(mp, lat, payoff, f);
    SolveOptions opt;
    opt.retain_policy = true;
    const SolveResult sol = solve(mp, lat, payoff, f, grid, opt);
    const SimConfig cfg = make_sim_config(mp, n, 150, 200, 333);
    const BracketReport rep = shortfall_bracket(sol, 0.25, cfg);
    CHECK(rep.lower == 0.0);
    CHECK(rep.upper_proxy == 0.0);
    CHECK(rep.r_n == 0.0);
}

TEST_CASE("bracket is consistent on the call benchmark") {
    MarketParams mp = benchmark_market();
    const int n = 8;
    const LatticeSpec lat = calibrate(mp, n);
    PayoffSpec payoff{PayoffKind::call, 1.0, 0.0};
    Frictions f{0.01, 0.01};
    GridSpec grid = default_grid(mp, lat, payoff, f);
    SolveOptions opt;
    opt.retain_policy = true;
    const SolveResult sol = solve(mp, lat, payoff, f, grid, opt);
    const double x = 0.5 * snell_value(mp, lat, payoff);
    const SimConfig cfg = make_sim_config(mp, n, 150, 500, 424243);
    const BracketReport rep = shortfall_bracket(sol, x, cfg);
    CHECK(rep.completed + rep.dropped == cfg.n_paths);
    CHECK(rep.completed > 400);
    CHECK(rep.lower <= rep.upper_proxy + 1e-12);
    CHECK(rep.lower >= 0.0);
    CHECK(rep.upper_is_heuristic);
    REQUIRE(rep.rules.size() == static_cast<std::size_t>(n + 1) + 4);
}
