#pragma once

#include <array>

#include "elastireg/grid.hpp"

namespace elastireg {

// Multilinear sample at a continuous voxel coordinate. Coordinates are
// clamped to the domain boundary (edge replication).
double sample_linear(const ScalarGrid& grid, double cx, double cy, double cz = 0.0);

// Sample plus the derivative of the sampled value with respect to each
// coordinate. The derivative is 0 along any axis whose coordinate was
// clamped (c <= 0 or c >= n-1).
double sample_linear_grad(const ScalarGrid& grid, double cx, double cy, double cz,
                          std::array<double, 3>& d_coord);

// Multilinear sample of one displacement component at a continuous coordinate.
double sample_field_linear(const DisplacementField& field, int component, double cx, double cy,
                           double cz = 0.0);

// M o phi: resamples `image` at x + u(x). Displacements are in voxel units.
ScalarGrid warp(const ScalarGrid& image, const DisplacementField& field);

struct WarpResult {
    ScalarGrid value;
    // d value(x) / d u_c(x); only components < dim are populated.
    std::array<ScalarGrid, 3> d_field;
};

// warp plus its per-voxel derivative with respect to the displacement.
WarpResult warp_with_gradient(const ScalarGrid& image, const DisplacementField& field);

// d u_component / d x_axis by forward differences, divided by spacing[axis].
// The last slice along `axis` holds 0.
ScalarGrid forward_diff(const DisplacementField& field, int component, int axis);

// Per-voxel det(I + grad u) with derivatives taken in voxel units (no spacing
// division), so det == 1 means volume preservation under any spacing.
ScalarGrid jacobian_determinant(const DisplacementField& field);

// Mean of `grid` over the interior (voxels whose forward-difference stencil is
// complete along every axis: x_a < dims[a]-1 for all axes with dims[a] > 1).
double interior_mean(const ScalarGrid& grid);

// True if the voxel at flat index `idx` is interior in the sense above.
bool is_interior_voxel(const GridDomain& domain, std::size_t idx);

}  // namespace elastireg
