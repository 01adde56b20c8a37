#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortfall/market.hpp"

namespace shortfall {

enum class PayoffKind {
    call,         ///< (S(t) - K)^+
    put,          ///< (K - S(t))^+
    capped_call,  ///< min((S(t) - K)^+, cap)
    lookback_max, ///< max_{s<=t} S(s)
    russian,      ///< (max_{s<=t} S(s) - S(t))^+
};

inline std::string to_string(PayoffKind kind) {
    switch (kind) {
        case PayoffKind::call: return "call";
        case PayoffKind::put: return "put";
        case PayoffKind::capped_call: return "capped-call";
        case PayoffKind::lookback_max: return "lookback-max";
        case PayoffKind::russian: return "russian";
    }
    return "?";
}

inline PayoffKind parse_payoff_kind(const std::string& name) {
    if (name == "call") return PayoffKind::call;
    if (name == "put") return PayoffKind::put;
    if (name == "capped-call") return PayoffKind::capped_call;
    if (name == "lookback-max") return PayoffKind::lookback_max;
    if (name == "russian") return PayoffKind::russian;
    throw std::invalid_argument("unknown payoff kind: " + name);
}

/// Path functional F(t, path) applied to piecewise-constant price paths.
/// `path_general` disables the Markov reduction, forcing the DP onto the
/// full binary tree (used to exercise the fallback).
struct PayoffSpec {
    PayoffKind kind = PayoffKind::call;
    double strike = 0.0;
    double cap = 0.0;
    bool path_general = false;

    void validate() const {
        const bool uses_strike = kind == PayoffKind::call || kind == PayoffKind::put ||
                                 kind == PayoffKind::capped_call;
        if (uses_strike && !(strike >= 0.0))
            throw std::invalid_argument("PayoffSpec: strike must be >= 0");
        if (kind == PayoffKind::capped_call && !(cap > 0.0))
            throw std::invalid_argument("PayoffSpec: cap must be > 0");
    }
};

namespace detail {

inline double payoff_from_prices(const PayoffSpec& p, double price, double running_max) {
    switch (p.kind) {
        case PayoffKind::call: return std::max(price - p.strike, 0.0);
        case PayoffKind::put: return std::max(p.strike - price, 0.0);
        case PayoffKind::capped_call: return std::min(std::max(price - p.strike, 0.0), p.cap);
        case PayoffKind::lookback_max: return running_max;
        case PayoffKind::russian: return std::max(running_max - price, 0.0);
    }
    return 0.0;
}

}  // namespace detail

/// Payoff of the lattice price path at time kT/n.  `path` holds the first k
/// moves as +1/-1.
inline double evaluate(const PayoffSpec& payoff, const LatticeSpec& lat, const MarketParams& mp,
                       int k, std::span<const int> path) {
    payoff.validate();
    if (k < 0 || k > lat.n) throw std::out_of_range("evaluate: k out of range");
    if (static_cast<int>(path.size()) < k)
        throw std::invalid_argument("evaluate: path shorter than k");
    int net = 0;
    int max_net = 0;
    for (int i = 0; i < k; ++i) {
        if (path[i] != 1 && path[i] != -1)
            throw std::invalid_argument("evaluate: path entries must be +1 or -1");
        net += path[i];
        max_net = std::max(max_net, net);
    }
    const double price = price_from_net(lat, mp.s0, net);
    const double running_max = price_from_net(lat, mp.s0, max_net);
    return detail::payoff_from_prices(payoff, price, running_max);
}

/// Finite node descriptor sufficient to evaluate and advance the payoff.
/// `net` is the displacement sum(xi); `aux` is its running maximum for the
/// lookback kinds and stays 0 otherwise so that plain claims recombine on
/// k+1 states per step.
struct MarkovState {
    int net = 0;
    int aux = 0;

    friend bool operator==(const MarkovState&, const MarkovState&) = default;
    friend auto operator<=>(const MarkovState&, const MarkovState&) = default;
};

class MarkovAdapter {
public:
    MarkovAdapter(const PayoffSpec& payoff, const LatticeSpec& lat, const MarketParams& mp)
        : payoff_(payoff), lat_(lat), s0_(mp.s0),
          tracks_max_(payoff.kind == PayoffKind::lookback_max ||
                      payoff.kind == PayoffKind::russian) {}

    MarkovState initial() const { return {}; }

    MarkovState advance(MarkovState s, int sign) const {
        s.net += sign > 0 ? 1 : -1;
        if (tracks_max_) s.aux = std::max(s.aux, s.net);
        return s;
    }

    double payoff_at(MarkovState s, int /*k*/) const {
        const double price = price_from_net(lat_, s0_, s.net);
        const double running_max = price_from_net(lat_, s0_, s.aux);
        return detail::payoff_from_prices(payoff_, price, running_max);
    }

    bool tracks_max() const { return tracks_max_; }

private:
    PayoffSpec payoff_;
    LatticeSpec lat_;
    double s0_;
    bool tracks_max_;
};

/// State-machine reduction, or nullopt for payoffs declared path-general.
inline std::optional<MarkovAdapter> markov_adapter(const PayoffSpec& payoff,
                                                   const LatticeSpec& lat,
                                                   const MarketParams& mp) {
    payoff.validate();
    if (payoff.path_general) return std::nullopt;
    return MarkovAdapter(payoff, lat, mp);
}

/// Growth constant C with F(t, x) <= C sup_{s<=T} x(s) on lattice paths.
/// The put needs the lattice floor S0 (1-a)^n; everything else is dominated
/// by the running maximum itself.
inline double growth_bound(const PayoffSpec& payoff, const LatticeSpec& lat,
                           const MarketParams& mp) {
    if (payoff.kind == PayoffKind::put) {
        const double floor = mp.s0 * std::pow(1.0 - lat.a, lat.n);
        return payoff.strike / floor;
    }
    return 1.0;
}

}  // namespace shortfall
