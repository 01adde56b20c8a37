#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace shortfall {

/// Black-Scholes market S(t) = S0 exp(sigma W(t) + (kappa - sigma^2/2) t)
/// with the savings account normalized to a zero rate.
struct MarketParams {
    double s0 = 1.0;       ///< initial stock price, > 0
    double sigma = 0.2;    ///< volatility per sqrt(year), > 0
    double kappa = 0.0;    ///< drift parameter per year
    double maturity = 1.0; ///< option maturity T in years, > 0

    void validate() const {
        if (!(s0 > 0.0)) throw std::invalid_argument("MarketParams: s0 must be > 0");
        if (!(sigma > 0.0)) throw std::invalid_argument("MarketParams: sigma must be > 0");
        if (!(maturity > 0.0)) throw std::invalid_argument("MarketParams: maturity must be > 0");
        if (!std::isfinite(kappa)) throw std::invalid_argument("MarketParams: kappa must be finite");
    }
};

/// Proportional transaction cost rates: buying stock value w costs
/// (1 + lambda) w, selling yields (1 - mu) w.  Zero rates are admitted so
/// the frictionless model runs through the same code path.
struct Frictions {
    double lambda = 0.0; ///< purchase cost rate, >= 0
    double mu = 0.0;     ///< sale cost rate, in [0, 1)

    void validate() const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda))
            throw std::invalid_argument("Frictions: lambda must be >= 0");
        if (!(mu >= 0.0 && mu < 1.0))
            throw std::invalid_argument("Frictions: mu must be in [0, 1)");
    }
};

/// Calibrated n-step binomial lattice.  One step moves the price by the
/// factor 1 + b (up) or 1 - a (down) with (1 + b)(1 - a) = 1.
struct LatticeSpec {
    int n = 0;        ///< step count
    double delta = 0; ///< sigma * sqrt(T/n), log-price step
    double a = 0;     ///< down contraction, in (0, 1)
    double b = 0;     ///< up expansion, > 0
    double p_up = 0;  ///< physical probability of an up move
};

/// Computes delta, a_n = 1 - e^{-delta}, b_n = e^{delta} - 1 and the up
/// probability p_n = 1 / (exp((sigma - 2 kappa / sigma) sqrt(T/n)) + 1).
inline LatticeSpec calibrate(const MarketParams& mp, int n) {
    mp.validate();
    if (n < 1) throw std::invalid_argument("calibrate: n must be >= 1");
    LatticeSpec lat;
    lat.n = n;
    const double root = std::sqrt(mp.maturity / static_cast<double>(n));
    lat.delta = mp.sigma * root;
    lat.a = 1.0 - std::exp(-lat.delta);
    lat.b = std::exp(lat.delta) - 1.0;
    lat.p_up = 1.0 / (std::exp((mp.sigma - 2.0 * mp.kappa / mp.sigma) * root) + 1.0);
    return lat;
}

/// Lattice price after k steps of which up_count were up moves.  Depends on
/// the path only through (k, up_count): the lattice recombines.
inline double stock_price(const LatticeSpec& lat, const MarketParams& mp, int k, int up_count) {
    if (k < 0 || k > lat.n || up_count < 0 || up_count > k)
        throw std::out_of_range("stock_price: need 0 <= up_count <= k <= n");
    return mp.s0 * std::exp(lat.delta * static_cast<double>(2 * up_count - k));
}

/// Price from the net displacement sum(xi_i) = 2 * up_count - k.
inline double price_from_net(const LatticeSpec& lat, double s0, int net) {
    return s0 * std::exp(lat.delta * static_cast<double>(net));
}

}  // namespace shortfall
