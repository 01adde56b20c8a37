#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortfall/dp.hpp"
#include "shortfall/errors.hpp"
#include "shortfall/friction.hpp"
#include "shortfall/market.hpp"
#include "shortfall/parallel.hpp"
#include "shortfall/payoff.hpp"
#include "shortfall/rng.hpp"

namespace shortfall {

/// Monte Carlo driver configuration.  The crossing-time construction needs
/// the simulation horizon past T (theta_n may exceed the maturity), and a
/// fine grid well below the band width: m >= 100 n.
struct SimConfig {
    long long fine_steps = 0; ///< grid steps over [0, t_sim]
    double t_sim = 0.0;       ///< simulation horizon, >= T (default 4 T)
    int n_paths = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (fine_steps < 2) throw std::invalid_argument("SimConfig: fine_steps must be >= 2");
        if (!(t_sim > 0.0)) throw std::invalid_argument("SimConfig: t_sim must be > 0");
        if (n_paths < 1) throw std::invalid_argument("SimConfig: n_paths must be >= 1");
    }
};

/// fine_steps = steps_per_lattice_step * n over the whole horizon
/// t_sim_factor * T; the crossing-detection invariant needs the multiplier
/// to be at least 100.
inline SimConfig make_sim_config(const MarketParams& mp, int n, long long steps_per_lattice_step,
                                 int n_paths, std::uint64_t seed, double t_sim_factor = 4.0) {
    SimConfig cfg;
    cfg.t_sim = t_sim_factor * mp.maturity;
    cfg.fine_steps = steps_per_lattice_step * static_cast<long long>(n);
    cfg.n_paths = n_paths;
    cfg.seed = seed;
    return cfg;
}

/// Samples of W*(t) = ln S^W(t) / sigma on the fine grid: Brownian motion
/// with drift kappa/sigma - sigma/2 started at ln(S0)/sigma.  Deterministic
/// given (seed, path_index).
inline std::vector<double> simulate_driver(const MarketParams& mp, const SimConfig& cfg,
                                           long long path_index) {
    mp.validate();
    cfg.validate();
    const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
    const double drift = (mp.kappa / mp.sigma - 0.5 * mp.sigma) * dt;
    const double vol = std::sqrt(dt);
    PathRng rng(cfg.seed, static_cast<std::uint64_t>(path_index));
    std::vector<double> path(static_cast<std::size_t>(cfg.fine_steps) + 1);
    path[0] = std::log(mp.s0) / mp.sigma;
    for (std::size_t j = 1; j < path.size(); ++j)
        path[j] = path[j - 1] + drift + vol * rng.normal();
    return path;
}

/// A simulated path reduced to its band-crossing skeleton.  Prices are the
/// embedded binomial prices S0 exp(delta sum(xi)): the continuous path hits
/// the band exactly, the grid detection does not, so levels are snapped and
/// only the crossing times keep the detection bias.
struct CrossingRecord {
    std::vector<double> theta;  ///< crossing times, theta[0] = 0
    std::vector<int> signs;     ///< breach directions
    std::vector<double> prices; ///< S at each crossing, prices[0] = S0
    bool completed = false;     ///< all n crossings found before t_sim
};

inline CrossingRecord extract_crossings(std::span<const double> wstar_path, double dt, int n,
                                        const MarketParams& mp) {
    if (n < 1) throw std::invalid_argument("extract_crossings: n must be >= 1");
    if (wstar_path.size() < 2) throw std::invalid_argument("extract_crossings: empty path");
    const long long m = static_cast<long long>(wstar_path.size()) - 1;
    if (m < 100LL * n)
        throw std::invalid_argument("extract_crossings: need fine_steps >= 100 n for crossing "
                                    "detection, got m = " +
                                    std::to_string(m));
    const double level = std::sqrt(mp.maturity / static_cast<double>(n));
    CrossingRecord rec;
    rec.theta.reserve(static_cast<std::size_t>(n) + 1);
    rec.signs.reserve(static_cast<std::size_t>(n));
    rec.prices.reserve(static_cast<std::size_t>(n) + 1);
    rec.theta.push_back(0.0);
    rec.prices.push_back(mp.s0);
    double anchor = wstar_path[0];
    int net = 0;
    for (long long j = 1; j <= m && rec.signs.size() < static_cast<std::size_t>(n); ++j) {
        const double d = wstar_path[static_cast<std::size_t>(j)] - anchor;
        if (d >= level || d <= -level) {
            const int sign = d >= level ? 1 : -1;
            anchor += sign > 0 ? level : -level; // snap to the exact band edge
            net += sign;
            rec.theta.push_back(static_cast<double>(j) * dt);
            rec.signs.push_back(sign);
            rec.prices.push_back(mp.s0 * std::exp(mp.sigma * level * net));
        }
    }
    rec.completed = rec.signs.size() == static_cast<std::size_t>(n);
    return rec;
}

/// Wealth of a binomial strategy carried into the simulated market along a
/// crossing record.  By the strategy lift, the wealth at each crossing time
/// must coincide with the binomial wealth on the record's sign sequence;
/// the check is enforced here.
inline std::vector<double> lift_strategy(std::span<const double> transfers,
                                         const CrossingRecord& rec, double x,
                                         const LatticeSpec& lat, const Frictions& f) {
    if (!rec.completed)
        throw incomplete_record_error("lift_strategy: record is missing crossings");
    if (transfers.size() != rec.signs.size())
        throw std::invalid_argument("lift_strategy: transfers do not match the record length");
    const WealthPath lifted = crossing_wealth_path(x, transfers, rec.prices, lat, f);
    const WealthPath binomial = discrete_wealth_path(x, transfers, rec.signs, lat, f);
    for (std::size_t k = 0; k < lifted.wealth.size(); ++k) {
        const double gap = std::abs(lifted.wealth[k] - binomial.wealth[k]);
        if (gap > 1e-10 * (1.0 + std::abs(binomial.wealth[k])))
            throw std::logic_error("lift_strategy: wealth identity violated at step " +
                                   std::to_string(k));
    }
    return lifted.wealth;
}

/// Incremental evaluation of the payoff functional along a price path fed
/// one point at a time (piecewise-constant interpolation throughout).
class PathPayoff {
public:
    PathPayoff(const PayoffSpec& payoff, double s0)
        : payoff_(payoff), running_max_(s0), last_(s0) {}

    void push(double price) {
        last_ = price;
        if (price > running_max_) running_max_ = price;
    }

    double value() const { return detail::payoff_from_prices(payoff_, last_, running_max_); }

private:
    PayoffSpec payoff_;
    double running_max_;
    double last_;
};

struct EstimatorRow {
    int n = 0;
    long long fine_steps = 0;
    int completed = 0;
    int dropped = 0;
    MeanStdErr s_gap;      ///< E sup_{t<=T} |S^{W,n}(t) - S^W(t)|
    MeanStdErr theta_gap;  ///< E max_k |theta_k - kT/n|
    MeanStdErr payoff_gap; ///< E sup_{t<=T} |Y^W(t) - Y^{W,n}(t)|
};

/// Monte Carlo estimates of the embedding convergence quantities for each
/// lattice size.  steps_per_lattice_step fixes the fine-grid ratio m/n on
/// [0, T]: the grid over [0, t_sim] has ratio * n * (t_sim / T) steps.
inline std::vector<EstimatorRow> convergence_diagnostics(const MarketParams& mp,
                                                         const PayoffSpec& payoff,
                                                         std::span<const int> n_list,
                                                         long long steps_per_lattice_step,
                                                         int n_paths, std::uint64_t seed,
                                                         double t_sim_factor = 4.0,
                                                         int threads = 0) {
    payoff.validate();
    std::vector<EstimatorRow> rows;
    for (int n : n_list) {
        const SimConfig cfg = make_sim_config(mp, n, steps_per_lattice_step, n_paths, seed,
                                              t_sim_factor);
        const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
        const double t_mat = mp.maturity;
        EstimatorRow row;
        row.n = n;
        row.fine_steps = cfg.fine_steps;
        std::vector<double> s_gap(static_cast<std::size_t>(cfg.n_paths),
                                  std::numeric_limits<double>::quiet_NaN());
        std::vector<double> th_gap = s_gap, y_gap = s_gap;
        parallel_for(0, cfg.n_paths, threads, [&](long long lo, long long hi) {
            for (long long pi = lo; pi < hi; ++pi) {
                const std::vector<double> w = simulate_driver(mp, cfg, pi);
                const CrossingRecord rec = extract_crossings(w, dt, n, mp);
                if (!rec.completed) continue;
                double max_s = 0.0, max_y = 0.0;
                PathPayoff fine_payoff(payoff, mp.s0);
                PathPayoff embedded_payoff(payoff, mp.s0);
                int embedded_k = 0;
                const double w0 = w[0];
                for (long long j = 0; j * dt <= t_mat && j <= cfg.fine_steps; ++j) {
                    const double t = static_cast<double>(j) * dt;
                    const double s = mp.s0 * std::exp(mp.sigma * (w[static_cast<std::size_t>(j)] - w0));
                    const int k = std::min(static_cast<int>(t * n / t_mat), n);
                    while (embedded_k < k) {
                        ++embedded_k;
                        embedded_payoff.push(rec.prices[static_cast<std::size_t>(embedded_k)]);
                    }
                    if (j > 0) fine_payoff.push(s);
                    max_s = std::max(max_s,
                                     std::abs(rec.prices[static_cast<std::size_t>(k)] - s));
                    max_y = std::max(max_y,
                                     std::abs(fine_payoff.value() - embedded_payoff.value()));
                }
                double max_th = 0.0;
                for (int k = 1; k <= n; ++k)
                    max_th = std::max(max_th, std::abs(rec.theta[static_cast<std::size_t>(k)] -
                                                       static_cast<double>(k) * t_mat / n));
                s_gap[static_cast<std::size_t>(pi)] = max_s;
                th_gap[static_cast<std::size_t>(pi)] = max_th;
                y_gap[static_cast<std::size_t>(pi)] = max_y;
            }
        });
        std::vector<double> s_ok, th_ok, y_ok;
        for (std::size_t i = 0; i < s_gap.size(); ++i) {
            if (std::isnan(s_gap[i])) {
                ++row.dropped;
                continue;
            }
            s_ok.push_back(s_gap[i]);
            th_ok.push_back(th_gap[i]);
            y_ok.push_back(y_gap[i]);
        }
        row.completed = static_cast<int>(s_ok.size());
        row.s_gap = mean_stderr(s_ok);
        row.theta_gap = mean_stderr(th_ok);
        row.payoff_gap = mean_stderr(y_ok);
        rows.push_back(row);
    }
    return rows;
}

/// Pooled crossing-sign frequency against the lattice up-probability.
struct SignLawReport {
    long long ups = 0;
    long long total = 0;
    double expected_p = 0.0;
    double chi_square = 0.0; ///< 1 degree of freedom
};

inline SignLawReport sign_law(const MarketParams& mp, int n, const SimConfig& cfg,
                              int threads = 0) {
    const LatticeSpec lat = calibrate(mp, n);
    const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
    std::vector<long long> ups(static_cast<std::size_t>(cfg.n_paths), 0);
    std::vector<long long> total(static_cast<std::size_t>(cfg.n_paths), 0);
    parallel_for(0, cfg.n_paths, threads, [&](long long lo, long long hi) {
        for (long long pi = lo; pi < hi; ++pi) {
            const std::vector<double> w = simulate_driver(mp, cfg, pi);
            const CrossingRecord rec = extract_crossings(w, dt, n, mp);
            long long u = 0;
            for (int s : rec.signs)
                if (s > 0) ++u;
            ups[static_cast<std::size_t>(pi)] = u;
            total[static_cast<std::size_t>(pi)] = static_cast<long long>(rec.signs.size());
        }
    });
    SignLawReport rep;
    rep.expected_p = lat.p_up;
    for (std::size_t i = 0; i < ups.size(); ++i) {
        rep.ups += ups[i];
        rep.total += total[i];
    }
    if (rep.total > 0) {
        const double e_up = rep.expected_p * static_cast<double>(rep.total);
        const double e_dn = (1.0 - rep.expected_p) * static_cast<double>(rep.total);
        const double o_up = static_cast<double>(rep.ups);
        const double o_dn = static_cast<double>(rep.total - rep.ups);
        rep.chi_square = (o_up - e_up) * (o_up - e_up) / e_up +
                         (o_dn - e_dn) * (o_dn - e_dn) / e_dn;
    }
    return rep;
}

struct StoppingRuleEstimate {
    std::string name;
    MeanStdErr shortfall;
};

/// Monte Carlo bracket for the continuous-time shortfall of the lifted
/// optimal policy.  The lower estimate instantiates the shortfall supremum
/// on a fixed family of stopping rules (each crossing time capped at T and
/// payoff-threshold rules on the fine grid).  The upper proxy is
/// R_n(x) plus the payoff-gap estimate; the density-ratio correction of the
/// full decomposition is intentionally dropped, so the proxy is a heuristic
/// ceiling, not a proven bound.
struct BracketReport {
    int n = 0;
    double x = 0.0;
    double r_n = 0.0;
    double lower = 0.0;
    double lower_se = 0.0;
    double payoff_gap = 0.0;
    double upper_proxy = 0.0;
    bool upper_is_heuristic = true;
    int completed = 0;
    int dropped = 0;
    std::vector<StoppingRuleEstimate> rules;
};

inline BracketReport shortfall_bracket(const SolveResult& sol, double x, const SimConfig& cfg,
                                       int threads = 0) {
    if (sol.policy.empty())
        throw std::invalid_argument("shortfall_bracket: solve() ran without retain_policy");
    const MarketParams& mp = sol.market;
    const LatticeSpec& lat = sol.lattice;
    const Frictions& f = sol.frictions;
    const int n = lat.n;
    const double dt = cfg.t_sim / static_cast<double>(cfg.fine_steps);
    const double t_mat = mp.maturity;

    // Fixed stopping-rule family: tau_k = theta_k ^ T, and first passage of
    // the payoff over fixed fractions of the largest lattice payoff.
    const std::vector<double> thresholds = {0.25, 0.5, 0.75, 1.0};
    const std::size_t rule_count = static_cast<std::size_t>(n + 1) + thresholds.size();
    std::vector<std::vector<double>> shortfalls(
        rule_count, std::vector<double>(static_cast<std::size_t>(cfg.n_paths),
                                        std::numeric_limits<double>::quiet_NaN()));
    std::vector<double> ygap(static_cast<std::size_t>(cfg.n_paths),
                             std::numeric_limits<double>::quiet_NaN());

    parallel_for(0, cfg.n_paths, threads, [&](long long lo_pi, long long hi_pi) {
        for (long long pi = lo_pi; pi < hi_pi; ++pi) {
            const std::vector<double> w = simulate_driver(mp, cfg, pi);
            const CrossingRecord rec = extract_crossings(w, dt, n, mp);
            if (!rec.completed) continue;

            // Policy transfers along the record signs, with the cash and
            // position-value decomposition needed between crossings.
            // cash[k+1] / shares_value[k+1] describe the portfolio right
            // after the transfer at theta_k, at the theta_k price.
            const StrategyPath strat = extract_strategy(sol, x, rec.signs);
            std::vector<double> cash(static_cast<std::size_t>(n) + 1);
            std::vector<double> shares_value(static_cast<std::size_t>(n) + 1);
            cash[0] = x;
            shares_value[0] = 0.0;
            for (int k = 0; k < n; ++k) {
                const double tr = strat.transfers[static_cast<std::size_t>(k)];
                cash[static_cast<std::size_t>(k + 1)] =
                    cash[static_cast<std::size_t>(k)] -
                    (tr >= 0.0 ? (1.0 + f.lambda) * tr : (1.0 - f.mu) * tr);
                shares_value[static_cast<std::size_t>(k + 1)] =
                    strat.position_value[static_cast<std::size_t>(k)] + tr;
            }

            PathPayoff fine_payoff(sol.payoff, mp.s0);
            PathPayoff embedded_payoff(sol.payoff, mp.s0);
            const double w0 = w[0];
            int seg = 0;        // crossings with theta <= t
            int embedded_k = 0; // calendar-slot index of the embedded path
            double max_y_gap = 0.0;
            double last_y = 0.0, last_wealth = x;
            std::vector<double> rule_vals(rule_count,
                                          std::numeric_limits<double>::quiet_NaN());
            std::vector<bool> threshold_hit(thresholds.size(), false);

            for (long long j = 0; static_cast<double>(j) * dt <= t_mat && j <= cfg.fine_steps;
                 ++j) {
                const double t = static_cast<double>(j) * dt;
                const double s =
                    mp.s0 * std::exp(mp.sigma * (w[static_cast<std::size_t>(j)] - w0));
                if (j > 0) fine_payoff.push(s);
                bool at_crossing = j == 0;
                while (seg < n && rec.theta[static_cast<std::size_t>(seg + 1)] <= t) {
                    ++seg;
                    at_crossing = true;
                    // tau = theta_seg: pre-transfer wealth is the binomial one
                    rule_vals[static_cast<std::size_t>(seg)] = std::max(
                        fine_payoff.value() - strat.wealth[static_cast<std::size_t>(seg)], 0.0);
                }
                // wealth V(t): pre-transfer at crossings, carried position
                // between them, flat cash after the last crossing
                double wealth_now;
                if (at_crossing) {
                    wealth_now = strat.wealth[static_cast<std::size_t>(seg)];
                } else if (seg == n) {
                    wealth_now = strat.wealth[static_cast<std::size_t>(n)];
                } else {
                    const double ratio = s / rec.prices[static_cast<std::size_t>(seg)];
                    const double pos = shares_value[static_cast<std::size_t>(seg + 1)] * ratio;
                    wealth_now = cash[static_cast<std::size_t>(seg + 1)] +
                                 liquidation_value(pos, f);
                }
                if (j == 0)
                    rule_vals[0] = std::max(fine_payoff.value() - x, 0.0);
                const int k_cal = std::min(static_cast<int>(t * n / t_mat), n);
                while (embedded_k < k_cal) {
                    ++embedded_k;
                    embedded_payoff.push(rec.prices[static_cast<std::size_t>(embedded_k)]);
                }
                max_y_gap = std::max(max_y_gap,
                                     std::abs(fine_payoff.value() - embedded_payoff.value()));
                const bool last_point = (static_cast<double>(j + 1) * dt > t_mat) ||
                                        (j + 1 > cfg.fine_steps);
                for (std::size_t q = 0; q < thresholds.size(); ++q) {
                    if (threshold_hit[q]) continue;
                    const double level = thresholds[q] * sol.nodes.max_payoff;
                    if (fine_payoff.value() >= level || last_point) {
                        threshold_hit[q] = true;
                        rule_vals[static_cast<std::size_t>(n + 1) + q] =
                            std::max(fine_payoff.value() - wealth_now, 0.0);
                    }
                }
                last_y = fine_payoff.value();
                last_wealth = wealth_now;
            }
            // crossing rules whose theta exceeds T stop at T instead
            const double short_at_t = std::max(last_y - last_wealth, 0.0);
            for (int k = seg + 1; k <= n; ++k)
                rule_vals[static_cast<std::size_t>(k)] = short_at_t;

            for (std::size_t r = 0; r < rule_count; ++r)
                shortfalls[r][static_cast<std::size_t>(pi)] = rule_vals[r];
            ygap[static_cast<std::size_t>(pi)] = max_y_gap;
        }
    });

    BracketReport rep;
    rep.n = n;
    rep.x = x;
    rep.r_n = sol.read_risk(x);
    std::vector<double> compact;
    auto compact_of = [&](const std::vector<double>& vals) {
        compact.clear();
        for (double v : vals)
            if (!std::isnan(v)) compact.push_back(v);
        return mean_stderr(compact);
    };
    for (std::size_t r = 0; r < rule_count; ++r) {
        StoppingRuleEstimate est;
        est.name = r <= static_cast<std::size_t>(n)
                       ? "theta_" + std::to_string(r) + "^T"
                       : "payoff>=" +
                             std::to_string(thresholds[r - static_cast<std::size_t>(n + 1)]) +
                             "*max_payoff";
        est.shortfall = compact_of(shortfalls[r]);
        if (est.shortfall.mean > rep.lower) {
            rep.lower = est.shortfall.mean;
            rep.lower_se = est.shortfall.std_error;
        }
        rep.rules.push_back(std::move(est));
    }
    const MeanStdErr gap = compact_of(ygap);
    rep.payoff_gap = gap.mean;
    rep.upper_proxy = rep.r_n + gap.mean;
    compact.clear();
    for (double v : ygap)
        if (!std::isnan(v)) compact.push_back(v);
    rep.completed = static_cast<int>(compact.size());
    rep.dropped = cfg.n_paths - rep.completed;
    return rep;
}

}  // namespace shortfall
