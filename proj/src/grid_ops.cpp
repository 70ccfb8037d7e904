#include "elastireg/grid_ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "elastireg/parallel.hpp"

namespace elastireg {

namespace {

struct AxisSample {
    int i0 = 0;
    int i1 = 0;
    double frac = 0.0;
    bool clamped = false;
};

inline AxisSample resolve_axis(double c, int n) {
    AxisSample s;
    if (n == 1) {
        s.clamped = true;
        return s;
    }
    if (c <= 0.0) {
        s.clamped = true;
        return s;
    }
    if (c >= static_cast<double>(n - 1)) {
        s.i0 = s.i1 = n - 1;
        s.clamped = true;
        return s;
    }
    const double fl = std::floor(c);
    s.i0 = static_cast<int>(fl);
    s.i1 = s.i0 + 1;
    s.frac = c - fl;
    return s;
}

}  // namespace

double sample_linear(const ScalarGrid& grid, double cx, double cy, double cz) {
    std::array<double, 3> unused;
    return sample_linear_grad(grid, cx, cy, cz, unused);
}

double sample_linear_grad(const ScalarGrid& grid, double cx, double cy, double cz,
                          std::array<double, 3>& d_coord) {
    const GridDomain& d = grid.domain;
    const AxisSample sx = resolve_axis(cx, d.dims[0]);
    const AxisSample sy = resolve_axis(cy, d.dims[1]);
    const AxisSample sz = d.dim == 3 ? resolve_axis(cz, d.dims[2]) : AxisSample{};

    auto v = [&](int x, int y, int z) { return grid.values[d.index(x, y, z)]; };

    d_coord = {0.0, 0.0, 0.0};
    if (d.dim == 2) {
        const double v00 = v(sx.i0, sy.i0, 0), v10 = v(sx.i1, sy.i0, 0);
        const double v01 = v(sx.i0, sy.i1, 0), v11 = v(sx.i1, sy.i1, 0);
        const double fx = sx.frac, fy = sy.frac;
        const double a = (1.0 - fx) * v00 + fx * v10;
        const double b = (1.0 - fx) * v01 + fx * v11;
        if (!sx.clamped) d_coord[0] = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
        if (!sy.clamped) d_coord[1] = b - a;
        return (1.0 - fy) * a + fy * b;
    }

    const double fx = sx.frac, fy = sy.frac, fz = sz.frac;
    const double v000 = v(sx.i0, sy.i0, sz.i0), v100 = v(sx.i1, sy.i0, sz.i0);
    const double v010 = v(sx.i0, sy.i1, sz.i0), v110 = v(sx.i1, sy.i1, sz.i0);
    const double v001 = v(sx.i0, sy.i0, sz.i1), v101 = v(sx.i1, sy.i0, sz.i1);
    const double v011 = v(sx.i0, sy.i1, sz.i1), v111 = v(sx.i1, sy.i1, sz.i1);

    const double a00 = (1.0 - fx) * v000 + fx * v100;
    const double a10 = (1.0 - fx) * v010 + fx * v110;
    const double a01 = (1.0 - fx) * v001 + fx * v101;
    const double a11 = (1.0 - fx) * v011 + fx * v111;
    const double b0 = (1.0 - fy) * a00 + fy * a10;
    const double b1 = (1.0 - fy) * a01 + fy * a11;

    if (!sx.clamped) {
        const double g00 = v100 - v000, g10 = v110 - v010;
        const double g01 = v101 - v001, g11 = v111 - v011;
        const double h0 = (1.0 - fy) * g00 + fy * g10;
        const double h1 = (1.0 - fy) * g01 + fy * g11;
        d_coord[0] = (1.0 - fz) * h0 + fz * h1;
    }
    if (!sy.clamped) d_coord[1] = (1.0 - fz) * (a10 - a00) + fz * (a11 - a01);
    if (!sz.clamped) d_coord[2] = b1 - b0;
    return (1.0 - fz) * b0 + fz * b1;
}

double sample_field_linear(const DisplacementField& field, int component, double cx, double cy,
                           double cz) {
    const GridDomain& d = field.domain;
    const AxisSample sx = resolve_axis(cx, d.dims[0]);
    const AxisSample sy = resolve_axis(cy, d.dims[1]);
    const AxisSample sz = d.dim == 3 ? resolve_axis(cz, d.dims[2]) : AxisSample{};

    auto v = [&](int x, int y, int z) { return field.comp(component, d.index(x, y, z)); };

    if (d.dim == 2) {
        const double a = (1.0 - sx.frac) * v(sx.i0, sy.i0, 0) + sx.frac * v(sx.i1, sy.i0, 0);
        const double b = (1.0 - sx.frac) * v(sx.i0, sy.i1, 0) + sx.frac * v(sx.i1, sy.i1, 0);
        return (1.0 - sy.frac) * a + sy.frac * b;
    }
    const double a00 = (1.0 - sx.frac) * v(sx.i0, sy.i0, sz.i0) + sx.frac * v(sx.i1, sy.i0, sz.i0);
    const double a10 = (1.0 - sx.frac) * v(sx.i0, sy.i1, sz.i0) + sx.frac * v(sx.i1, sy.i1, sz.i0);
    const double a01 = (1.0 - sx.frac) * v(sx.i0, sy.i0, sz.i1) + sx.frac * v(sx.i1, sy.i0, sz.i1);
    const double a11 = (1.0 - sx.frac) * v(sx.i0, sy.i1, sz.i1) + sx.frac * v(sx.i1, sy.i1, sz.i1);
    const double b0 = (1.0 - sy.frac) * a00 + sy.frac * a10;
    const double b1 = (1.0 - sy.frac) * a01 + sy.frac * a11;
    return (1.0 - sz.frac) * b0 + sz.frac * b1;
}

ScalarGrid warp(const ScalarGrid& image, const DisplacementField& field) {
    require_same_domain(image.domain, field.domain, "warp");
    const GridDomain& d = image.domain;
    ScalarGrid out(d);
    const std::size_t n = d.voxel_count();
    const int nx = d.dims[0], ny = d.dims[1];
    par_for(n, [&](std::size_t idx) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(nx));
        const int y = static_cast<int>((idx / static_cast<std::size_t>(nx)) %
                                       static_cast<std::size_t>(ny));
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) *
                                              static_cast<std::size_t>(ny)));
        const double cx = x + field.comp(0, idx);
        const double cy = y + field.comp(1, idx);
        const double cz = d.dim == 3 ? z + field.comp(2, idx) : 0.0;
        out.values[idx] = sample_linear(image, cx, cy, cz);
    });
    return out;
}

WarpResult warp_with_gradient(const ScalarGrid& image, const DisplacementField& field) {
    require_same_domain(image.domain, field.domain, "warp");
    const GridDomain& d = image.domain;
    WarpResult r;
    r.value = ScalarGrid(d);
    for (int c = 0; c < d.dim; ++c) r.d_field[c] = ScalarGrid(d);
    const std::size_t n = d.voxel_count();
    const int nx = d.dims[0], ny = d.dims[1];
    par_for(n, [&](std::size_t idx) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(nx));
        const int y = static_cast<int>((idx / static_cast<std::size_t>(nx)) %
                                       static_cast<std::size_t>(ny));
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) *
                                              static_cast<std::size_t>(ny)));
        const double cx = x + field.comp(0, idx);
        const double cy = y + field.comp(1, idx);
        const double cz = d.dim == 3 ? z + field.comp(2, idx) : 0.0;
        std::array<double, 3> g;
        r.value.values[idx] = sample_linear_grad(image, cx, cy, cz, g);
        for (int c = 0; c < d.dim; ++c) r.d_field[c].values[idx] = g[c];
    });
    return r;
}

ScalarGrid forward_diff(const DisplacementField& field, int component, int axis) {
    const GridDomain& d = field.domain;
    if (component < 0 || component >= d.dim || axis < 0 || axis >= d.dim) {
        throw std::invalid_argument("forward_diff: axis/component " + std::to_string(axis) + "/" +
                                    std::to_string(component) + " out of range for dim " +
                                    std::to_string(d.dim));
    }
    ScalarGrid out(d);
    const int nx = d.dims[0], ny = d.dims[1];
    const int n_axis = d.dims[axis];
    const std::size_t stride = axis == 0 ? 1
                             : axis == 1 ? static_cast<std::size_t>(nx)
                                         : static_cast<std::size_t>(nx) * ny;
    const double h = d.spacing[axis];
    par_for(d.voxel_count(), [&](std::size_t idx) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(nx));
        const int y = static_cast<int>((idx / static_cast<std::size_t>(nx)) %
                                       static_cast<std::size_t>(ny));
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) *
                                              static_cast<std::size_t>(ny)));
        const int pos = axis == 0 ? x : axis == 1 ? y : z;
        out.values[idx] = pos + 1 < n_axis
                              ? (field.comp(component, idx + stride) - field.comp(component, idx)) /
                                    h
                              : 0.0;
    });
    return out;
}

ScalarGrid jacobian_determinant(const DisplacementField& field) {
    const GridDomain& d = field.domain;
    ScalarGrid out(d);
    const int nx = d.dims[0], ny = d.dims[1];
    const std::size_t strides[3] = {1, static_cast<std::size_t>(nx),
                                    static_cast<std::size_t>(nx) * ny};
    par_for(d.voxel_count(), [&](std::size_t idx) {
        const int coords[3] = {
            static_cast<int>(idx % static_cast<std::size_t>(nx)),
            static_cast<int>((idx / static_cast<std::size_t>(nx)) % static_cast<std::size_t>(ny)),
            static_cast<int>(idx / (static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)))};
        // J[i][j] = d_ij + d u_i / d x_j, voxel units.
        double J[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (int j = 0; j < d.dim; ++j) {
            if (coords[j] + 1 < d.dims[j]) {
                for (int i = 0; i < d.dim; ++i) {
                    J[i][j] += field.comp(i, idx + strides[j]) - field.comp(i, idx);
                }
            }
        }
        out.values[idx] = d.dim == 2 ? J[0][0] * J[1][1] - J[0][1] * J[1][0]
                                     : J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                           J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                           J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
    });
    return out;
}

bool is_interior_voxel(const GridDomain& domain, std::size_t idx) {
    const int nx = domain.dims[0], ny = domain.dims[1];
    const int x = static_cast<int>(idx % static_cast<std::size_t>(nx));
    const int y = static_cast<int>((idx / static_cast<std::size_t>(nx)) %
                                   static_cast<std::size_t>(ny));
    const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) *
                                          static_cast<std::size_t>(ny)));
    const int coords[3] = {x, y, z};
    for (int a = 0; a < domain.dim; ++a) {
        if (domain.dims[a] > 1 && coords[a] + 1 >= domain.dims[a]) return false;
    }
    return true;
}

double interior_mean(const ScalarGrid& grid) {
    std::size_t count = 0;
    double sum = 0.0;
    for (std::size_t idx = 0; idx < grid.values.size(); ++idx) {
        if (is_interior_voxel(grid.domain, idx)) {
            sum += grid.values[idx];
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("interior_mean: grid has no interior voxels");
    return sum / static_cast<double>(count);
}

}  // namespace elastireg
