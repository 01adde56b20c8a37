#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "shortfall/market.hpp"

namespace shortfall {

struct AxisPos {
    int cell = 0;    ///< lower grid index
    double frac = 0; ///< weight of cell+1, in [0, 1]
};

/// Uniform axis over [0, hi].  Queries are clamped to the range.
class UniformAxis {
public:
    UniformAxis() = default;
    UniformAxis(double hi, int count) : hi_(hi), count_(count) {
        if (count < 2) throw std::invalid_argument("UniformAxis: need at least 2 points");
        if (!(hi > 0.0)) throw std::invalid_argument("UniformAxis: hi must be > 0");
        step_ = hi_ / static_cast<double>(count_ - 1);
        inv_step_ = static_cast<double>(count_ - 1) / hi_;
    }

    int count() const { return count_; }
    double hi() const { return hi_; }
    double step() const { return step_; }
    double value(int i) const { return static_cast<double>(i) * step_; }

    AxisPos locate(double x) const {
        double t = x * inv_step_;
        if (!(t > 0.0)) t = 0.0;
        const double tmax = static_cast<double>(count_ - 1);
        if (t > tmax) t = tmax;
        int cell = static_cast<int>(t);
        if (cell >= count_ - 1) cell = count_ - 2;
        return {cell, t - static_cast<double>(cell)};
    }

private:
    double hi_ = 1.0;
    int count_ = 2;
    double step_ = 1.0;
    double inv_step_ = 1.0;
};

/// Symmetric axis on [-vmax, vmax] with sinh-graded spacing: dense near 0
/// where the value functions have their kinks, coarse in the leveraged far
/// field.  Odd counts place 0 exactly on the grid.
class SinhAxis {
public:
    SinhAxis() = default;
    SinhAxis(double vmax, int count, double grading) : vmax_(vmax), count_(count), c_(grading) {
        if (count < 3 || count % 2 == 0)
            throw std::invalid_argument("SinhAxis: count must be odd and >= 3");
        if (!(vmax > 0.0)) throw std::invalid_argument("SinhAxis: vmax must be > 0");
        if (!(c_ > 0.0)) throw std::invalid_argument("SinhAxis: grading must be > 0");
        sinh_c_ = std::sinh(c_);
        half_ = (count_ - 1) / 2;
    }

    int count() const { return count_; }
    double vmax() const { return vmax_; }
    double grading() const { return c_; }
    int zero_index() const { return half_; }

    double value(int i) const {
        const double s = static_cast<double>(i - half_) / static_cast<double>(half_);
        return vmax_ * std::sinh(c_ * s) / sinh_c_;
    }

    AxisPos locate(double v) const {
        const double s = std::asinh(v / vmax_ * sinh_c_) / c_;
        double t = (s + 1.0) * 0.5 * static_cast<double>(count_ - 1);
        if (!(t > 0.0)) t = 0.0;
        const double tmax = static_cast<double>(count_ - 1);
        if (t > tmax) t = tmax;
        int cell = static_cast<int>(t);
        if (cell >= count_ - 1) cell = count_ - 2;
        return {cell, t - static_cast<double>(cell)};
    }

private:
    double vmax_ = 1.0;
    int count_ = 3;
    double c_ = 6.0;
    double sinh_c_ = 1.0;
    int half_ = 1;
};

/// Row-major samples over the (u, v) grid.
struct Grid2D {
    int nu = 0;
    int nv = 0;
    std::vector<double> data;

    Grid2D() = default;
    Grid2D(int nu_, int nv_) : nu(nu_), nv(nv_), data(static_cast<std::size_t>(nu_) * nv_, 0.0) {}

    double& at(int iu, int iv) { return data[static_cast<std::size_t>(iu) * nv + iv]; }
    double at(int iu, int iv) const { return data[static_cast<std::size_t>(iu) * nv + iv]; }
};

inline double bilinear(const Grid2D& g, const UniformAxis& ua, const SinhAxis& va, double u,
                       double v) {
    const AxisPos pu = ua.locate(u);
    const AxisPos pv = va.locate(v);
    const double* row0 = g.data.data() + static_cast<std::size_t>(pu.cell) * g.nv + pv.cell;
    const double* row1 = row0 + g.nv;
    const double a0 = row0[0] + pv.frac * (row0[1] - row0[0]);
    const double a1 = row1[0] + pv.frac * (row1[1] - row1[0]);
    return a0 + pu.frac * (a1 - a0);
}

/// Discretization of the DP domain R_+ x R.
struct GridSpec {
    double u_max = 0.0;   ///< must dominate every lattice payoff
    int n_u = 129;
    double v_min = 0.0;
    double v_max = 0.0;
    int n_v = 97;
    int w_candidates = 256; ///< inner-search segments per scan
    int refine_rounds = 2;
    double v_grading = 6.0;

    void validate() const {
        if (!(u_max > 0.0)) throw std::invalid_argument("GridSpec: u_max must be > 0");
        if (n_u < 2) throw std::invalid_argument("GridSpec: n_u must be >= 2");
        if (n_v < 3) throw std::invalid_argument("GridSpec: n_v must be >= 3");
        if (!(v_min < 0.0 && v_max > 0.0))
            throw std::invalid_argument("GridSpec: v range must straddle 0");
        if (w_candidates < 8) throw std::invalid_argument("GridSpec: w_candidates must be >= 8");
        if (refine_rounds < 0) throw std::invalid_argument("GridSpec: refine_rounds must be >= 0");
    }
};

}  // namespace shortfall
