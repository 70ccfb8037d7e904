#pragma once

#include "elastireg/grid.hpp"

namespace elastireg::serial {

// Naive single-threaded reference kernels. These mirror the definitions as
// directly as possible (no separable filters, no fused passes) and exist so
// the OpenMP kernels can be checked against an independent implementation.
// The NCC reference evaluates every window by brute force, so it is
// O(N * window^D) and only suitable for small grids.

ScalarGrid warp(const ScalarGrid& image, const DisplacementField& field);

ScalarGrid forward_diff(const DisplacementField& field, int component, int axis);

ScalarGrid jacobian_determinant(const DisplacementField& field);

double ncc_value(const ScalarGrid& fixed, const ScalarGrid& moving, int window);

double diffusion_value(const DisplacementField& field);

double elastic_value(const DisplacementField& field, double lambda, double mu);

}  // namespace elastireg::serial
