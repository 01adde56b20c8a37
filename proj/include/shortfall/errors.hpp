#pragma once

#include <stdexcept>
#include <string>

namespace shortfall {

/// Thrown when the DP state leaves the value grid (or the grid cannot
/// represent the problem, e.g. u_max below the largest lattice payoff).
struct grid_escape_error : std::runtime_error {
    explicit grid_escape_error(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown by solve() when a payoff without a Markov reduction would require
/// a full binary tree beyond the supported depth.
struct tree_too_large_error : std::runtime_error {
    explicit tree_too_large_error(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when observed crossing prices are not successive lattice moves.
struct inconsistent_prices_error : std::runtime_error {
    explicit inconsistent_prices_error(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when a lifted strategy is requested on a crossing record that did
/// not reach all n crossings before the simulation horizon.
struct incomplete_record_error : std::runtime_error {
    explicit incomplete_record_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace shortfall
