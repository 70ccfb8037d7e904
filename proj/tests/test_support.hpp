#pragma once

#include <cmath>
#include <functional>

#include "elastireg/grid.hpp"
#include "elastireg/rng.hpp"

namespace elastireg::testing {

// fn(x, y, z) -> value
inline ScalarGrid make_grid(const GridDomain& d,
                            const std::function<double(int, int, int)>& fn) {
    ScalarGrid g(d);
    for (int z = 0; z < d.dims[2]; ++z) {
        for (int y = 0; y < d.dims[1]; ++y) {
            for (int x = 0; x < d.dims[0]; ++x) g.at(x, y, z) = fn(x, y, z);
        }
    }
    return g;
}

// fn(component, x, y, z) -> displacement component (voxel units)
inline DisplacementField make_field(const GridDomain& d,
                                    const std::function<double(int, int, int, int)>& fn) {
    DisplacementField f(d);
    for (int z = 0; z < d.dims[2]; ++z) {
        for (int y = 0; y < d.dims[1]; ++y) {
            for (int x = 0; x < d.dims[0]; ++x) {
                for (int c = 0; c < d.dim; ++c) f.comp(c, x, y, z) = fn(c, x, y, z);
            }
        }
    }
    return f;
}

inline ScalarGrid random_grid(const GridDomain& d, Rng& rng, double lo = 0.0, double hi = 1.0) {
    ScalarGrid g(d);
    for (double& v : g.values) v = rng.uniform(lo, hi);
    return g;
}

inline DisplacementField random_field(const GridDomain& d, Rng& rng, double lo = -0.5,
                                      double hi = 0.5) {
    DisplacementField f(d);
    for (double& v : f.vectors) v = rng.uniform(lo, hi);
    return f;
}

// Values of the form k / 1024 are exactly representable and survive sums with
// moderate dyadic constants, which the exact-invariance tests rely on.
inline DisplacementField dyadic_random_field(const GridDomain& d, Rng& rng) {
    DisplacementField f(d);
    for (double& v : f.vectors) {
        v = static_cast<double>(static_cast<int>(rng.next_below(2049)) - 1024) / 1024.0;
    }
    return f;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double rel_diff(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace elastireg::testing
