#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "shortfall/errors.hpp"
#include "shortfall/friction.hpp"
#include "shortfall/grid.hpp"
#include "shortfall/market.hpp"
#include "shortfall/parallel.hpp"
#include "shortfall/payoff.hpp"

namespace shortfall {

/// Lattice nodes the backward induction runs over: Markov states of the
/// payoff when a reduction exists, otherwise every path prefix.
struct NodeSet {
    bool full_tree = false;
    int n = 0;
    std::vector<std::vector<MarkovState>> states;          ///< [k][node]
    std::vector<std::vector<std::array<int, 2>>> children; ///< [k][node] = {up, down}, k < n
    std::vector<std::vector<double>> payoff;               ///< [k][node]
    double max_payoff = 0.0;
};

inline constexpr int kFullTreeCutoff = 12;

inline NodeSet build_nodes(const MarketParams& mp, const LatticeSpec& lat,
                           const PayoffSpec& payoff, int full_tree_cutoff = kFullTreeCutoff) {
    payoff.validate();
    NodeSet nodes;
    nodes.n = lat.n;
    nodes.states.resize(lat.n + 1);
    nodes.children.resize(lat.n);
    nodes.payoff.resize(lat.n + 1);

    const auto adapter = markov_adapter(payoff, lat, mp);
    if (adapter) {
        nodes.states[0] = {adapter->initial()};
        for (int k = 0; k < lat.n; ++k) {
            const auto& cur = nodes.states[k];
            auto& next = nodes.states[k + 1];
            next.reserve(cur.size() * 2);
            for (const auto& s : cur) {
                next.push_back(adapter->advance(s, +1));
                next.push_back(adapter->advance(s, -1));
            }
            std::sort(next.begin(), next.end());
            next.erase(std::unique(next.begin(), next.end()), next.end());
            auto index_of = [&next](const MarkovState& s) {
                return static_cast<int>(std::lower_bound(next.begin(), next.end(), s) -
                                        next.begin());
            };
            nodes.children[k].resize(cur.size());
            for (std::size_t i = 0; i < cur.size(); ++i) {
                nodes.children[k][i] = {index_of(adapter->advance(cur[i], +1)),
                                        index_of(adapter->advance(cur[i], -1))};
            }
        }
        for (int k = 0; k <= lat.n; ++k) {
            nodes.payoff[k].resize(nodes.states[k].size());
            for (std::size_t i = 0; i < nodes.states[k].size(); ++i)
                nodes.payoff[k][i] = adapter->payoff_at(nodes.states[k][i], k);
        }
    } else {
        if (lat.n > full_tree_cutoff)
            throw tree_too_large_error("solve: path-general payoff needs n <= " +
                                       std::to_string(full_tree_cutoff) + ", got n = " +
                                       std::to_string(lat.n));
        nodes.full_tree = true;
        // Node i at level k encodes the path in its k low bits, first move in
        // the most significant of them; up-child appends bit 1.
        std::vector<int> path;
        for (int k = 0; k <= lat.n; ++k) {
            const std::size_t count = std::size_t{1} << k;
            nodes.states[k].resize(count);
            nodes.payoff[k].resize(count);
            path.resize(static_cast<std::size_t>(k));
            for (std::size_t i = 0; i < count; ++i) {
                int net = 0, max_net = 0;
                for (int j = 0; j < k; ++j) {
                    const int sign = ((i >> (k - 1 - j)) & 1u) ? 1 : -1;
                    path[static_cast<std::size_t>(j)] = sign;
                    net += sign;
                    max_net = std::max(max_net, net);
                }
                nodes.states[k][i] = {net, max_net};
                nodes.payoff[k][i] = evaluate(payoff, lat, mp, k, path);
            }
            if (k < lat.n) {
                nodes.children[k].resize(count);
                for (std::size_t i = 0; i < count; ++i)
                    nodes.children[k][i] = {static_cast<int>(2 * i + 1),
                                            static_cast<int>(2 * i)};
            }
        }
    }
    for (const auto& level : nodes.payoff)
        for (double y : level) nodes.max_payoff = std::max(nodes.max_payoff, y);
    return nodes;
}

/// Physical-measure optimal-stopping value sup_tau E[Y(tau)] on the lattice.
inline double snell_value(const NodeSet& nodes, const LatticeSpec& lat) {
    std::vector<double> next = nodes.payoff[nodes.n];
    std::vector<double> cur;
    for (int k = nodes.n - 1; k >= 0; --k) {
        cur.resize(nodes.states[k].size());
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const auto [up, dn] = nodes.children[k][i];
            cur[i] = std::max(nodes.payoff[k][i],
                              lat.p_up * next[up] + (1.0 - lat.p_up) * next[dn]);
        }
        std::swap(cur, next);
    }
    return next[0];
}

inline double snell_value(const MarketParams& mp, const LatticeSpec& lat,
                          const PayoffSpec& payoff) {
    return snell_value(build_nodes(mp, lat, payoff), lat);
}

struct InnerSearch {
    int segments = 256;
    int refine_rounds = 2;
    /// Bounds on the post-transfer position v + w (from the child v-range);
    /// infinities disable the box.
    double vplus_lo = -std::numeric_limits<double>::infinity();
    double vplus_hi = std::numeric_limits<double>::infinity();
};

struct InnerResult {
    double value = 0.0;
    double w_star = 0.0;
    bool boxed = false; ///< scan range was clipped by the v-box
};

inline constexpr double kGolden = 0.6180339887498949;

/// Minimizes p J_up(G(u,v,w,1+b), (v+w)(1+b)) + (1-p) J_dn(G(u,v,w,1-a),
/// (v+w)(1-a)) over admissible transfers.  The objective is piecewise linear
/// but not convex in w, so the search is a candidate scan (endpoints, -v, 0,
/// uniform grid) followed by local refinement around the incumbent.  Ties
/// break toward the flat position: minimal (value, |v+w|, w).
template <class FUp, class FDn>
InnerResult inner_min(double u, double v, const LatticeSpec& lat, const Frictions& f,
                      FUp&& j_up, FDn&& j_dn, const InnerSearch& search) {
    const TransferInterval iv = admissible_interval(u, v, lat.a, lat.b, f);
    InnerResult out;
    double lo = iv.lo, hi = iv.hi;
    if (search.vplus_lo - v > lo) {
        lo = search.vplus_lo - v;
        out.boxed = true;
    }
    if (search.vplus_hi - v < hi) {
        hi = search.vplus_hi - v;
        out.boxed = true;
    }
    const double rho_up = 1.0 + lat.b;
    const double rho_dn = 1.0 - lat.a;
    const double p = lat.p_up;

    auto objective = [&](double w) {
        const double vp = v + w;
        return p * j_up(wealth_step(u, v, w, rho_up, f), vp * rho_up) +
               (1.0 - p) * j_dn(wealth_step(u, v, w, rho_dn, f), vp * rho_dn);
    };

    double best_val = std::numeric_limits<double>::infinity();
    double best_w = -v;
    double best_key = 0.0;
    auto consider = [&](double w) {
        const double val = objective(w);
        const double key = std::abs(v + w);
        if (val < best_val ||
            (val == best_val && (key < best_key || (key == best_key && w < best_w)))) {
            best_val = val;
            best_w = w;
            best_key = key;
        }
    };

    consider(-v); // always admissible and inside the box
    if (0.0 >= lo && 0.0 <= hi) consider(0.0);
    const double width = hi - lo;
    if (width > 0.0) {
        const int g = search.segments;
        const double step = width / static_cast<double>(g);
        for (int i = 0; i <= g; ++i) consider(lo + step * static_cast<double>(i));
        double span = step;
        for (int r = 0; r < search.refine_rounds; ++r) {
            const double wlo = std::max(lo, best_w - kGolden * span);
            const double whi = std::min(hi, best_w + kGolden * span);
            const double rstep = (whi - wlo) / 32.0;
            if (!(rstep > 0.0)) break;
            for (int i = 0; i <= 32; ++i) consider(wlo + rstep * static_cast<double>(i));
            span = rstep;
        }
    } else {
        consider(lo);
    }
    out.value = best_val;
    out.w_star = best_w;
    return out;
}

/// Optimal transfers sampled on the value grid, stored single-precision.
struct PolicyGrid {
    int nu = 0;
    int nv = 0;
    std::vector<float> w;

    PolicyGrid() = default;
    PolicyGrid(int nu_, int nv_) : nu(nu_), nv(nv_), w(static_cast<std::size_t>(nu_) * nv_, 0.f) {}

    float& at(int iu, int iv) { return w[static_cast<std::size_t>(iu) * nv + iv]; }

    double read(const UniformAxis& ua, const SinhAxis& va, double u, double v) const {
        const AxisPos pu = ua.locate(u);
        const AxisPos pv = va.locate(v);
        const float* row0 = w.data() + static_cast<std::size_t>(pu.cell) * nv + pv.cell;
        const float* row1 = row0 + nv;
        const double a0 = row0[0] + pv.frac * (row0[1] - row0[0]);
        const double a1 = row1[0] + pv.frac * (row1[1] - row1[0]);
        return a0 + pu.frac * (a1 - a0);
    }
};

struct SolveOptions {
    int threads = 0;            ///< 0 = hardware concurrency
    bool retain_policy = false; ///< keep per-node optimal transfers
    bool retain_values = false; ///< keep every value slice (diagnostics/tests)
    bool terminal_exact = true; ///< evaluate J_n in closed form instead of sampling it
    int full_tree_cutoff = kFullTreeCutoff;
};

struct SolveDiagnostics {
    double max_payoff = 0.0;
    double max_monotone_clip = 0.0;  ///< largest downward clip restoring u-monotonicity
    long long boxed_scans = 0;       ///< inner scans clipped by the v-box
    double final_refine_span = 0.0;  ///< w-resolution after the last refinement round
};

struct SolveResult {
    MarketParams market;
    LatticeSpec lattice;
    Frictions frictions;
    PayoffSpec payoff;
    GridSpec grid;
    NodeSet nodes;
    UniformAxis u_axis;
    SinhAxis v_axis;
    Grid2D value0;                              ///< J_0 samples (root node)
    std::vector<std::vector<Grid2D>> values;    ///< retained slices [k][node]
    std::vector<std::vector<PolicyGrid>> policy; ///< retained transfers [k][node]
    SolveDiagnostics diag;

    /// J_0(x, 0), piecewise linear along the v = 0 grid line; x is clamped
    /// into [0, u_max].
    double read_risk(double x) const {
        const double xc = std::clamp(x, 0.0, grid.u_max);
        const AxisPos p = u_axis.locate(xc);
        const int ivz = v_axis.zero_index();
        const double lo = value0.at(p.cell, ivz);
        const double hi = value0.at(p.cell + 1, ivz);
        return lo + p.frac * (hi - lo);
    }
};

namespace detail {

inline int odd_count(int c) { return c % 2 == 0 ? c + 1 : c; }

}  // namespace detail

/// Default discretization: u_max at 1.1x the largest lattice payoff,
/// symmetric v-range wide enough for the admissible leverage, graded grid.
inline GridSpec default_grid(const MarketParams& mp, const LatticeSpec& lat,
                             const PayoffSpec& payoff, const Frictions& f) {
    const NodeSet nodes = build_nodes(mp, lat, payoff);
    GridSpec g;
    g.u_max = nodes.max_payoff > 0.0 ? 1.1 * nodes.max_payoff : mp.s0;
    const double denom = std::min(lat.a * (1.0 - f.mu) + f.lambda + f.mu, 1.0);
    const double vmax = std::max(g.u_max / denom, 4.0 * mp.s0);
    g.v_max = vmax;
    g.v_min = -vmax;
    g.n_u = 129;
    g.n_v = 97;
    return g;
}

inline GridSpec doubled(GridSpec g) {
    g.n_u = 2 * (g.n_u - 1) + 1;
    g.n_v = detail::odd_count(2 * (g.n_v - 1) + 1);
    return g;
}

/// Backward dynamic programming for the value functions J_k and the optimal
/// transfer policy.  Terminal values (phi_n - u)^+ enter in closed form by
/// default so the last step carries no interpolation error.
inline SolveResult solve(const MarketParams& mp, const LatticeSpec& lat,
                         const PayoffSpec& payoff, const Frictions& f, const GridSpec& grid,
                         const SolveOptions& opt = {}) {
    mp.validate();
    f.validate();
    grid.validate();
    SolveResult res;
    res.market = mp;
    res.lattice = lat;
    res.frictions = f;
    res.payoff = payoff;
    res.grid = grid;
    res.nodes = build_nodes(mp, lat, payoff, opt.full_tree_cutoff);
    res.diag.max_payoff = res.nodes.max_payoff;
    if (grid.u_max < res.nodes.max_payoff * (1.0 - 1e-12))
        throw grid_escape_error("solve: u_max = " + std::to_string(grid.u_max) +
                                " cannot represent the largest payoff " +
                                std::to_string(res.nodes.max_payoff));
    const int n_v = detail::odd_count(grid.n_v);
    const double v_abs = std::max(-grid.v_min, grid.v_max);
    res.u_axis = UniformAxis(grid.u_max, grid.n_u);
    res.v_axis = SinhAxis(v_abs, n_v, grid.v_grading);

    const int n = lat.n;
    const NodeSet& nodes = res.nodes;
    if (opt.retain_values) res.values.resize(static_cast<std::size_t>(n) + 1);
    if (opt.retain_policy) res.policy.resize(static_cast<std::size_t>(n));

    auto make_terminal_slice = [&]() {
        std::vector<Grid2D> slice(nodes.states[n].size());
        for (std::size_t i = 0; i < slice.size(); ++i) {
            slice[i] = Grid2D(grid.n_u, n_v);
            const double phi = nodes.payoff[n][i];
            for (int iu = 0; iu < grid.n_u; ++iu) {
                const double val = std::max(phi - res.u_axis.value(iu), 0.0);
                for (int iv = 0; iv < n_v; ++iv) slice[i].at(iu, iv) = val;
            }
        }
        return slice;
    };

    std::vector<Grid2D> next;
    if (!opt.terminal_exact || opt.retain_values) {
        next = make_terminal_slice();
        if (opt.retain_values) res.values[static_cast<std::size_t>(n)] = next;
    }

    // Scan box keeping both children's position values inside the v-range.
    InnerSearch search;
    search.segments = grid.w_candidates;
    search.refine_rounds = grid.refine_rounds;
    search.vplus_lo = grid.v_min / (1.0 + lat.b);
    search.vplus_hi = grid.v_max / (1.0 + lat.b);
    InnerSearch terminal_search = search;
    terminal_search.vplus_lo = -std::numeric_limits<double>::infinity();
    terminal_search.vplus_hi = std::numeric_limits<double>::infinity();

    std::vector<long long> row_boxed(static_cast<std::size_t>(grid.n_u));
    std::vector<double> row_span(static_cast<std::size_t>(grid.n_u));

    for (int k = n - 1; k >= 0; --k) {
        const std::size_t node_count = nodes.states[k].size();
        std::vector<Grid2D> cur(node_count);
        std::vector<PolicyGrid> pol(opt.retain_policy ? node_count : 0);
        for (std::size_t i = 0; i < node_count; ++i) {
            cur[i] = Grid2D(grid.n_u, n_v);
            if (opt.retain_policy) pol[i] = PolicyGrid(grid.n_u, n_v);
            const auto [up, dn] = nodes.children[k][i];
            const double phi_here = nodes.payoff[k][i];
            const bool exact_children = (k == n - 1) && opt.terminal_exact;
            const double phi_up = nodes.payoff[k + 1][up];
            const double phi_dn = nodes.payoff[k + 1][dn];
            const Grid2D* grid_up = exact_children ? nullptr : &next[static_cast<std::size_t>(up)];
            const Grid2D* grid_dn = exact_children ? nullptr : &next[static_cast<std::size_t>(dn)];
            const InnerSearch& node_search = exact_children ? terminal_search : search;

            std::fill(row_boxed.begin(), row_boxed.end(), 0);
            std::fill(row_span.begin(), row_span.end(), 0.0);
            parallel_for(0, grid.n_u, opt.threads, [&](long long iu_lo, long long iu_hi) {
                for (long long iu = iu_lo; iu < iu_hi; ++iu) {
                    const double u = res.u_axis.value(static_cast<int>(iu));
                    for (int iv = 0; iv < n_v; ++iv) {
                        const double v = res.v_axis.value(iv);
                        InnerResult r;
                        if (exact_children) {
                            r = inner_min(
                                u, v, lat, f,
                                [phi_up](double uc, double) { return std::max(phi_up - uc, 0.0); },
                                [phi_dn](double uc, double) { return std::max(phi_dn - uc, 0.0); },
                                node_search);
                        } else {
                            r = inner_min(
                                u, v, lat, f,
                                [&](double uc, double vc) {
                                    return bilinear(*grid_up, res.u_axis, res.v_axis, uc, vc);
                                },
                                [&](double uc, double vc) {
                                    return bilinear(*grid_dn, res.u_axis, res.v_axis, uc, vc);
                                },
                                node_search);
                        }
                        cur[i].at(static_cast<int>(iu), iv) =
                            std::max(std::max(phi_here - u, 0.0), r.value);
                        if (opt.retain_policy)
                            pol[i].at(static_cast<int>(iu), iv) = static_cast<float>(r.w_star);
                        if (r.boxed) ++row_boxed[static_cast<std::size_t>(iu)];
                    }
                }
            });
            for (long long c : row_boxed) res.diag.boxed_scans += c;
            // Lemma-backed cleanup: J is non-increasing in u; clip scan noise.
            for (int iu = 1; iu < grid.n_u; ++iu) {
                for (int iv = 0; iv < n_v; ++iv) {
                    double& cell = cur[i].at(iu, iv);
                    const double above = cur[i].at(iu - 1, iv);
                    if (cell > above) {
                        res.diag.max_monotone_clip =
                            std::max(res.diag.max_monotone_clip, cell - above);
                        cell = above;
                    }
                }
            }
        }
        if (opt.retain_values) res.values[static_cast<std::size_t>(k)] = cur;
        if (opt.retain_policy) res.policy[static_cast<std::size_t>(k)] = std::move(pol);
        next = std::move(cur);
    }
    res.value0 = std::move(next[0]);
    return res;
}

/// Shortfall risk report: R_n(x, lambda, mu) = J_0(x, 0) plus run metadata.
struct RiskReport {
    double risk = 0.0;
    double x = 0.0;
    bool cash_dominated = false; ///< x covers every lattice payoff; all-cash is optimal
    bool x_clamped = false;
    double snell0 = 0.0; ///< R_n(0) companion value
    MarketParams market;
    LatticeSpec lattice;
    Frictions frictions;
    PayoffSpec payoff;
    GridSpec grid;
    SolveDiagnostics diag;
};

inline RiskReport shortfall_risk(const MarketParams& mp, const LatticeSpec& lat,
                                 const PayoffSpec& payoff, const Frictions& f, double x,
                                 const GridSpec& grid, const SolveOptions& opt = {}) {
    if (!(x >= 0.0)) throw std::invalid_argument("shortfall_risk: x must be >= 0");
    RiskReport rep;
    rep.x = x;
    rep.market = mp;
    rep.lattice = lat;
    rep.frictions = f;
    rep.payoff = payoff;
    rep.grid = grid;
    const NodeSet nodes = build_nodes(mp, lat, payoff, opt.full_tree_cutoff);
    rep.snell0 = snell_value(nodes, lat);
    rep.diag.max_payoff = nodes.max_payoff;
    if (x >= nodes.max_payoff) {
        // Cash dominates: keeping x in the account makes every shortfall
        // (phi_k - x)^+ vanish, so the risk is exactly zero.
        rep.cash_dominated = true;
        rep.risk = 0.0;
        return rep;
    }
    const SolveResult sol = solve(mp, lat, payoff, f, grid, opt);
    rep.x_clamped = x > grid.u_max;
    rep.risk = sol.read_risk(x);
    rep.diag = sol.diag;
    return rep;
}

inline RiskReport shortfall_risk(const SolveResult& sol, double x) {
    if (!(x >= 0.0)) throw std::invalid_argument("shortfall_risk: x must be >= 0");
    RiskReport rep;
    rep.x = x;
    rep.market = sol.market;
    rep.lattice = sol.lattice;
    rep.frictions = sol.frictions;
    rep.payoff = sol.payoff;
    rep.grid = sol.grid;
    rep.diag = sol.diag;
    rep.snell0 = snell_value(sol.nodes, sol.lattice);
    if (x >= sol.nodes.max_payoff) {
        rep.cash_dominated = true;
        rep.risk = 0.0;
        return rep;
    }
    rep.x_clamped = x > sol.grid.u_max;
    rep.risk = sol.read_risk(x);
    return rep;
}

inline int nodes_child(const NodeSet& nodes, int k, int node, int sign) {
    return nodes.children[k][static_cast<std::size_t>(node)][sign > 0 ? 0 : 1];
}

/// Transfers and wealth along one lattice path under the solved policy.
struct StrategyPath {
    std::vector<double> transfers;      ///< w_k, stock value at the pre-move price
    std::vector<double> wealth;         ///< V(0..len)
    std::vector<double> position_value; ///< gamma(k) S(k) before the step-k transfer
    std::vector<double> shares;         ///< gamma(0..len)
};

inline StrategyPath extract_strategy(const SolveResult& sol, double x,
                                     std::span<const int> signs) {
    if (sol.policy.empty())
        throw std::invalid_argument("extract_strategy: solve() ran without retain_policy");
    if (static_cast<int>(signs.size()) > sol.lattice.n)
        throw std::invalid_argument("extract_strategy: more signs than lattice steps");
    if (!(x >= 0.0)) throw std::invalid_argument("extract_strategy: x must be >= 0");
    const LatticeSpec& lat = sol.lattice;
    const Frictions& f = sol.frictions;
    StrategyPath path;
    path.wealth.push_back(x);
    path.position_value.push_back(0.0);
    path.shares.push_back(0.0);
    double u = x, v = 0.0;
    int node = 0;
    for (std::size_t j = 0; j < signs.size(); ++j) {
        const int k = static_cast<int>(j);
        double w = sol.policy[j][static_cast<std::size_t>(node)].read(sol.u_axis, sol.v_axis, u, v);
        const TransferInterval iv = admissible_interval(u, v, lat.a, lat.b, f);
        w = std::clamp(w, iv.lo, iv.hi);
        const double price = price_from_net(lat, sol.market.s0, sol.nodes.states[k][node].net);
        const double rho = signs[j] > 0 ? 1.0 + lat.b : 1.0 - lat.a;
        const double u_next = wealth_step(u, v, w, rho, f);
        if (u_next < -1e-9 * (1.0 + u))
            throw grid_escape_error("extract_strategy: wealth left the admissible region");
        path.transfers.push_back(w);
        path.shares.push_back(path.shares.back() + w / price);
        v = (v + w) * rho;
        u = std::max(u_next, 0.0);
        path.wealth.push_back(u);
        path.position_value.push_back(v);
        node = nodes_child(sol.nodes, k, node, signs[j]);
    }
    return path;
}

/// Full transfer tree on path prefixes (up-child appends bit 1), suitable
/// for evaluate_strategy_risk.  Depth-limited to the full-tree cutoff.
inline std::vector<std::vector<double>> extract_transfer_tree(const SolveResult& sol, double x) {
    const int n = sol.lattice.n;
    if (n > kFullTreeCutoff)
        throw std::invalid_argument("extract_transfer_tree: n exceeds the full-tree cutoff");
    if (sol.policy.empty())
        throw std::invalid_argument("extract_transfer_tree: solve() ran without retain_policy");
    const LatticeSpec& lat = sol.lattice;
    const Frictions& f = sol.frictions;
    std::vector<std::vector<double>> tree(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) tree[static_cast<std::size_t>(k)].resize(std::size_t{1} << k);

    struct Frame {
        int k;
        std::size_t bits;
        int node;
        double u, v;
    };
    std::vector<Frame> stack{{0, 0, 0, x, 0.0}};
    while (!stack.empty()) {
        const Frame fr = stack.back();
        stack.pop_back();
        if (fr.k == n) continue;
        double w = sol.policy[static_cast<std::size_t>(fr.k)][static_cast<std::size_t>(fr.node)]
                       .read(sol.u_axis, sol.v_axis, fr.u, fr.v);
        const TransferInterval iv = admissible_interval(fr.u, fr.v, lat.a, lat.b, f);
        w = std::clamp(w, iv.lo, iv.hi);
        tree[static_cast<std::size_t>(fr.k)][fr.bits] = w;
        const double uu = std::max(wealth_step(fr.u, fr.v, w, 1.0 + lat.b, f), 0.0);
        const double ud = std::max(wealth_step(fr.u, fr.v, w, 1.0 - lat.a, f), 0.0);
        const double vp = fr.v + w;
        stack.push_back({fr.k + 1, fr.bits * 2 + 1, nodes_child(sol.nodes, fr.k, fr.node, +1),
                         uu, vp * (1.0 + lat.b)});
        stack.push_back({fr.k + 1, fr.bits * 2, nodes_child(sol.nodes, fr.k, fr.node, -1),
                         ud, vp * (1.0 - lat.a)});
    }
    return tree;
}

/// Snell risk of a fixed strategy: U(n) = (Y - V)^+, backward
/// U(k) = max((Y - V)^+, E[U(k+1)]); returns U(0) = R_n(pi).
inline double evaluate_strategy_risk(const std::vector<std::vector<double>>& transfer_tree,
                                     const MarketParams& mp, const LatticeSpec& lat,
                                     const PayoffSpec& payoff, const Frictions& f, double x) {
    const int n = lat.n;
    if (n > 20) throw std::invalid_argument("evaluate_strategy_risk: tree too deep");
    if (static_cast<int>(transfer_tree.size()) != n)
        throw std::invalid_argument("evaluate_strategy_risk: missing node level");
    for (int k = 0; k < n; ++k)
        if (transfer_tree[static_cast<std::size_t>(k)].size() != (std::size_t{1} << k))
            throw std::invalid_argument("evaluate_strategy_risk: missing node at level " +
                                        std::to_string(k));
    // Forward wealth on the full tree.
    std::vector<std::vector<double>> wealth(static_cast<std::size_t>(n) + 1);
    std::vector<std::vector<double>> position(static_cast<std::size_t>(n) + 1);
    wealth[0] = {x};
    position[0] = {0.0};
    for (int k = 0; k < n; ++k) {
        const std::size_t count = std::size_t{1} << k;
        wealth[k + 1].resize(count * 2);
        position[k + 1].resize(count * 2);
        for (std::size_t i = 0; i < count; ++i) {
            const double u = wealth[k][i];
            const double v = position[k][i];
            const double w = transfer_tree[static_cast<std::size_t>(k)][i];
            const double vp = v + w;
            wealth[k + 1][2 * i + 1] = wealth_step(u, v, w, 1.0 + lat.b, f);
            wealth[k + 1][2 * i] = wealth_step(u, v, w, 1.0 - lat.a, f);
            position[k + 1][2 * i + 1] = vp * (1.0 + lat.b);
            position[k + 1][2 * i] = vp * (1.0 - lat.a);
        }
    }
    // Payoffs along each prefix, evaluated through the path route.
    std::vector<int> path;
    auto payoff_at = [&](int k, std::size_t bits) {
        path.resize(static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j)
            path[static_cast<std::size_t>(j)] = ((bits >> (k - 1 - j)) & 1u) ? 1 : -1;
        return evaluate(payoff, lat, mp, k, path);
    };
    std::vector<double> next(std::size_t{1} << n);
    for (std::size_t i = 0; i < next.size(); ++i)
        next[i] = std::max(payoff_at(n, i) - wealth[static_cast<std::size_t>(n)][i], 0.0);
    std::vector<double> cur;
    for (int k = n - 1; k >= 0; --k) {
        const std::size_t count = std::size_t{1} << k;
        cur.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const double cont = lat.p_up * next[2 * i + 1] + (1.0 - lat.p_up) * next[2 * i];
            cur[i] = std::max(std::max(payoff_at(k, i) - wealth[k][i], 0.0), cont);
        }
        std::swap(cur, next);
    }
    return next[0];
}

/// Independent check of the solver on tiny instances: recursion over exact
/// portfolio states with per-node transfers drawn from a dense grid on the
/// admissible interval (plus the endpoints, -v and 0).  No value grids, no
/// interpolation, no recombination.
inline double oracle_bruteforce(const MarketParams& mp, const LatticeSpec& lat,
                                const PayoffSpec& payoff, const Frictions& f, double x,
                                int w_grid, int threads = 0) {
    if (lat.n > 3) throw std::invalid_argument("oracle_bruteforce: n must be <= 3");
    if (w_grid < 1) throw std::invalid_argument("oracle_bruteforce: w_grid must be >= 1");
    if (!(x >= 0.0)) throw std::invalid_argument("oracle_bruteforce: x must be >= 0");
    const int n = lat.n;
    // Payoffs per path prefix, path route only.
    std::vector<std::vector<double>> phi(static_cast<std::size_t>(n) + 1);
    std::vector<int> path;
    for (int k = 0; k <= n; ++k) {
        phi[static_cast<std::size_t>(k)].resize(std::size_t{1} << k);
        path.resize(static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < phi[static_cast<std::size_t>(k)].size(); ++i) {
            for (int j = 0; j < k; ++j)
                path[static_cast<std::size_t>(j)] = ((i >> (k - 1 - j)) & 1u) ? 1 : -1;
            phi[static_cast<std::size_t>(k)][i] = evaluate(payoff, lat, mp, k, path);
        }
    }
    const double rho_up = 1.0 + lat.b;
    const double rho_dn = 1.0 - lat.a;
    const double p = lat.p_up;

    std::function<double(int, double, double, std::size_t)> value =
        [&](int k, double u, double v, std::size_t bits) -> double {
        if (k == n) return std::max(phi[static_cast<std::size_t>(k)][bits] - u, 0.0);
        const double imm = std::max(phi[static_cast<std::size_t>(k)][bits] - u, 0.0);
        const TransferInterval iv = admissible_interval(u, v, lat.a, lat.b, f);
        auto candidate = [&](double w) {
            // interval endpoints zero out G analytically; clip float noise
            const double uu = std::max(wealth_step(u, v, w, rho_up, f), 0.0);
            const double ud = std::max(wealth_step(u, v, w, rho_dn, f), 0.0);
            const double vp = v + w;
            return p * value(k + 1, uu, vp * rho_up, 2 * bits + 1) +
                   (1.0 - p) * value(k + 1, ud, vp * rho_dn, 2 * bits);
        };
        double best = candidate(-v);
        if (0.0 >= iv.lo && 0.0 <= iv.hi) best = std::min(best, candidate(0.0));
        const double width = iv.hi - iv.lo;
        if (width > 0.0) {
            for (int i = 0; i <= w_grid; ++i)
                best = std::min(best,
                                candidate(iv.lo + width * static_cast<double>(i) /
                                                       static_cast<double>(w_grid)));
        }
        return std::max(imm, best);
    };

    // Root level: evaluate all candidates in parallel, then reduce by min
    // (order independent).
    const TransferInterval root_iv = admissible_interval(x, 0.0, lat.a, lat.b, f);
    std::vector<double> cands;
    cands.push_back(0.0); // -v = 0 at the root
    const double width = root_iv.hi - root_iv.lo;
    if (width > 0.0) {
        for (int i = 0; i <= w_grid; ++i)
            cands.push_back(root_iv.lo +
                            width * static_cast<double>(i) / static_cast<double>(w_grid));
    }
    std::vector<double> vals(cands.size());
    parallel_for(0, static_cast<long long>(cands.size()), threads,
                 [&](long long lo, long long hi) {
                     for (long long c = lo; c < hi; ++c) {
                         const double w = cands[static_cast<std::size_t>(c)];
                         const double uu = std::max(wealth_step(x, 0.0, w, rho_up, f), 0.0);
                         const double ud = std::max(wealth_step(x, 0.0, w, rho_dn, f), 0.0);
                         vals[static_cast<std::size_t>(c)] =
                             p * value(1, uu, w * rho_up, 1) +
                             (1.0 - p) * value(1, ud, w * rho_dn, 0);
                     }
                 });
    double best = std::numeric_limits<double>::infinity();
    for (double v : vals) best = std::min(best, v);
    return std::max(std::max(phi[0][0] - x, 0.0), best);
}

struct RiskCurve {
    std::vector<double> x;
    std::vector<double> risk;
    std::vector<double> breakpoints; ///< x-estimates of slope changes
};

/// Samples R_n(x) from one solve; breakpoints come from second differences
/// of the sampled curve.
inline RiskCurve risk_curve(const SolveResult& sol, std::span<const double> xs) {
    RiskCurve out;
    out.x.assign(xs.begin(), xs.end());
    out.risk.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] >= 0.0)) throw std::invalid_argument("risk_curve: x values must be >= 0");
        if (i > 0 && xs[i] < xs[i - 1])
            throw std::invalid_argument("risk_curve: x values must be sorted");
        out.risk.push_back(sol.read_risk(xs[i]));
    }
    if (xs.size() >= 3) {
        std::vector<double> slope(xs.size() - 1, 0.0);
        double max_abs_slope = 0.0;
        for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
            const double dx = xs[i + 1] - xs[i];
            slope[i] = dx > 0.0 ? (out.risk[i + 1] - out.risk[i]) / dx : 0.0;
            max_abs_slope = std::max(max_abs_slope, std::abs(slope[i]));
        }
        const double tol = std::max(1e-8, 0.02 * max_abs_slope);
        for (std::size_t i = 1; i + 1 < xs.size(); ++i)
            if (std::abs(slope[i] - slope[i - 1]) > tol) out.breakpoints.push_back(xs[i]);
    }
    return out;
}

}  // namespace shortfall
