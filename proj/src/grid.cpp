#include "elastireg/grid.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace elastireg {

namespace {

void check_axes(int dim, const std::array<int, 3>& dims, const std::array<double, 3>& spacing) {
    if (dim != 2 && dim != 3) {
        throw std::invalid_argument("grid dimensionality must be 2 or 3, got " +
                                    std::to_string(dim));
    }
    for (int a = 0; a < 3; ++a) {
        if (a < dim) {
            if (dims[a] < 1) throw std::invalid_argument("grid dims must be positive");
            if (!(spacing[a] > 0.0)) throw std::invalid_argument("grid spacing must be positive");
        } else {
            if (dims[a] != 1 || spacing[a] != 1.0) {
                throw std::invalid_argument("unused axes of a 2-D grid must have dim=1, spacing=1");
            }
        }
    }
}

}  // namespace

GridDomain::GridDomain(int dim_, std::array<int, 3> dims_, std::array<double, 3> spacing_)
    : dim(dim_), dims(dims_), spacing(spacing_) {
    check_axes(dim, dims, spacing);
}

GridDomain GridDomain::make2d(int nx, int ny, double sx, double sy) {
    return GridDomain(2, {nx, ny, 1}, {sx, sy, 1.0});
}

GridDomain GridDomain::make3d(int nx, int ny, int nz, double sx, double sy, double sz) {
    return GridDomain(3, {nx, ny, nz}, {sx, sy, sz});
}

void require_same_domain(const GridDomain& a, const GridDomain& b, const char* context) {
    if (a != b) {
        std::ostringstream os;
        os << context << ": grid domains differ (" << a.dims[0] << "x" << a.dims[1] << "x"
           << a.dims[2] << " vs " << b.dims[0] << "x" << b.dims[1] << "x" << b.dims[2] << ")";
        throw std::invalid_argument(os.str());
    }
}

ScalarGrid::ScalarGrid(const GridDomain& d, std::vector<double> v) : domain(d), values(std::move(v)) {
    if (values.size() != domain.voxel_count()) {
        throw std::invalid_argument("ScalarGrid: value count " + std::to_string(values.size()) +
                                    " does not match voxel count " +
                                    std::to_string(domain.voxel_count()));
    }
}

DisplacementField::DisplacementField(const GridDomain& d, std::vector<double> v)
    : domain(d), vectors(std::move(v)) {
    const std::size_t want = static_cast<std::size_t>(domain.dim) * domain.voxel_count();
    if (vectors.size() != want) {
        throw std::invalid_argument("DisplacementField: component count " +
                                    std::to_string(vectors.size()) + " does not match " +
                                    std::to_string(want));
    }
}

LabelGrid::LabelGrid(const GridDomain& d, std::vector<std::int32_t> v)
    : domain(d), labels(std::move(v)) {
    if (labels.size() != domain.voxel_count()) {
        throw std::invalid_argument("LabelGrid: label count does not match voxel count");
    }
}

void require_finite(const std::vector<double>& values, const char* context) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(context) + ": non-finite value encountered");
        }
    }
}

}  // namespace elastireg
