#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"

namespace shortfall {

/// Cash obtained by closing a position worth z in stock value:
/// (1 - mu) z^+ - (1 + lambda) z^-.
inline double liquidation_value(double z, const Frictions& f) {
    return z >= 0.0 ? (1.0 - f.mu) * z : (1.0 + f.lambda) * z;
}

/// One-step wealth map
///   G(u, v, w, rho) = u - (1-mu) v^+ + (1+lambda) v^- + (1-mu) w^-
///                     - (1+lambda) w^+ + rho ((1-mu)(v+w)^+ - (1+lambda)(v+w)^-)
/// where u is the liquidation wealth, v the position value gamma*S at the
/// pre-move price, w the transfer in stock value and rho the gross return.
/// Full liquidation w = -v returns u identically; the branch keeps that
/// identity exact in floating point.
inline double wealth_step(double u, double v, double w, double rho, const Frictions& f) {
    if (w == -v) return u;
    const double cash = u - liquidation_value(v, f);
    const double traded = cash - (w >= 0.0 ? (1.0 + f.lambda) * w : (1.0 - f.mu) * w);
    return traded + rho * liquidation_value(v + w, f);
}

/// Closed interval of transfers keeping both branch wealths nonnegative.
struct TransferInterval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double w, double tol = 0.0) const { return w >= lo - tol && w <= hi + tol; }
};

/// The set A_{a,b}(u, v) = { w : G(u,v,w,1+b) >= 0 and G(u,v,w,1-a) >= 0 }.
/// Both G branches are concave in w and equal u at w = -v, so the set is a
/// closed interval containing -v.  Endpoints follow the closed form; each
/// branch is the sum of two terms of which exactly one is active.
inline TransferInterval admissible_interval(double u, double v, double a, double b,
                                            const Frictions& f) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("admissible_interval: a must be in (0,1)");
    if (!(b > 0.0)) throw std::invalid_argument("admissible_interval: b must be > 0");
    if (!(u >= 0.0)) throw std::invalid_argument("admissible_interval: u must be >= 0");
    const double lam = f.lambda, mu = f.mu;
    TransferInterval iv;
    if (v >= 0.0) {
        iv.lo = -v - u / ((1.0 + lam) * (1.0 + b) - (1.0 - mu));
        const double q = u - a * v * (1.0 - mu);
        iv.hi = q >= 0.0 ? q / (1.0 + lam - (1.0 - mu) * (1.0 - a)) : q / (a * (1.0 - mu));
    } else {
        const double q = u + b * (1.0 + lam) * v;
        iv.lo = q >= 0.0 ? -q / ((1.0 + b) * (1.0 + lam) - (1.0 - mu)) : -q / (b * (1.0 + lam));
        iv.hi = -v + u / (1.0 + lam - (1.0 - mu) * (1.0 - a));
    }
    return iv;
}

/// Wealth sequence along a lattice path.  Admissibility is reported, not
/// enforced, so search code can probe and discard violations.
struct WealthPath {
    std::vector<double> wealth;         ///< V(0..n)
    std::vector<double> position_value; ///< v_k = gamma(k) S(k) before the step-k transfer
    std::optional<std::size_t> first_negative;
};

/// Iterates the wealth map with rho = 1 + b or 1 - a per sign.  Transfers
/// are in stock value at the pre-move price, so the recursion never needs
/// the price level itself.
inline WealthPath discrete_wealth_path(double x, std::span<const double> transfers,
                                       std::span<const int> signs, const LatticeSpec& lat,
                                       const Frictions& f) {
    if (!(x >= 0.0)) throw std::invalid_argument("discrete_wealth_path: x must be >= 0");
    if (transfers.size() != signs.size())
        throw std::invalid_argument("discrete_wealth_path: transfers/signs length mismatch");
    const std::size_t n = transfers.size();
    WealthPath out;
    out.wealth.resize(n + 1);
    out.position_value.resize(n + 1);
    out.wealth[0] = x;
    out.position_value[0] = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double rho = signs[k] > 0 ? 1.0 + lat.b : 1.0 - lat.a;
        out.wealth[k + 1] = wealth_step(out.wealth[k], out.position_value[k], transfers[k], rho, f);
        out.position_value[k + 1] = (out.position_value[k] + transfers[k]) * rho;
        if (!out.first_negative && out.wealth[k + 1] < 0.0) out.first_negative = k + 1;
    }
    return out;
}

/// Same recursion driven by observed crossing prices S(theta_0..theta_n).
/// Each successive ratio must be one of the two lattice factors; the exact
/// factor is used once classified, which is what makes the lift identity
/// hold to float exactness.
inline WealthPath crossing_wealth_path(double x, std::span<const double> transfers,
                                       std::span<const double> crossing_prices,
                                       const LatticeSpec& lat, const Frictions& f) {
    if (crossing_prices.size() != transfers.size() + 1)
        throw std::invalid_argument("crossing_wealth_path: need one more price than transfers");
    std::vector<int> signs(transfers.size());
    const double up = 1.0 + lat.b;
    const double dn = 1.0 - lat.a;
    for (std::size_t k = 0; k + 1 < crossing_prices.size(); ++k) {
        const double ratio = crossing_prices[k + 1] / crossing_prices[k];
        if (std::abs(ratio / up - 1.0) <= 1e-9) {
            signs[k] = 1;
        } else if (std::abs(ratio / dn - 1.0) <= 1e-9) {
            signs[k] = -1;
        } else {
            throw inconsistent_prices_error("crossing_wealth_path: price ratio " +
                                            std::to_string(ratio) + " is not a lattice move");
        }
    }
    return discrete_wealth_path(x, transfers, signs, lat, f);
}

}  // namespace shortfall
