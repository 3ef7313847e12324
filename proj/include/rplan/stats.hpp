#pragma once

#include <cmath>
#include <span>

#include "rplan/error.hpp"

namespace rplan {

// Quantile of ascending-sorted data, linear interpolation between order statistics
// (position q * (n - 1)).
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw PreconditionError("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw PreconditionError("quantile must lie in [0, 1]");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace rplan
