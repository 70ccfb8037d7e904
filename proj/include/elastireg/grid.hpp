#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace elastireg {

// Shared geometry of a dense voxel grid. Storage order is always x fastest,
// then y, then z. 2-D grids keep dims[2] == 1 and spacing[2] == 1.
struct GridDomain {
    int dim = 2;                                // 2 or 3
    std::array<int, 3> dims{1, 1, 1};           // voxels per axis
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel

    GridDomain() = default;
    GridDomain(int dim_, std::array<int, 3> dims_, std::array<double, 3> spacing_);

    static GridDomain make2d(int nx, int ny, double sx = 1.0, double sy = 1.0);
    static GridDomain make3d(int nx, int ny, int nz, double sx = 1.0, double sy = 1.0,
                             double sz = 1.0);

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) *
                                                      static_cast<std::size_t>(z));
    }

    // Physical extent along an axis: voxel centres live at [0, (n-1)*spacing].
    double extent_mm(int axis) const { return (dims[axis] - 1) * spacing[axis]; }

    bool operator==(const GridDomain& o) const {
        return dim == o.dim && dims == o.dims && spacing == o.spacing;
    }
    bool operator!=(const GridDomain& o) const { return !(*this == o); }
};

// Throws std::invalid_argument naming `context` when the two domains differ.
void require_same_domain(const GridDomain& a, const GridDomain& b, const char* context);

struct ScalarGrid {
    GridDomain domain;
    std::vector<double> values;  // one value per voxel, x fastest

    ScalarGrid() = default;
    explicit ScalarGrid(const GridDomain& d, double fill = 0.0)
        : domain(d), values(d.voxel_count(), fill) {}
    ScalarGrid(const GridDomain& d, std::vector<double> v);

    double& at(int x, int y, int z = 0) { return values[domain.index(x, y, z)]; }
    double at(int x, int y, int z = 0) const { return values[domain.index(x, y, z)]; }
};

struct DisplacementField {
    GridDomain domain;
    // Planar layout: component c occupies [c*N, (c+1)*N). Voxel units.
    std::vector<double> vectors;

    DisplacementField() = default;
    explicit DisplacementField(const GridDomain& d)
        : domain(d), vectors(static_cast<std::size_t>(d.dim) * d.voxel_count(), 0.0) {}
    DisplacementField(const GridDomain& d, std::vector<double> v);

    std::size_t voxel_count() const { return domain.voxel_count(); }

    double& comp(int c, std::size_t voxel) {
        return vectors[static_cast<std::size_t>(c) * voxel_count() + voxel];
    }
    double comp(int c, std::size_t voxel) const {
        return vectors[static_cast<std::size_t>(c) * voxel_count() + voxel];
    }
    double& comp(int c, int x, int y, int z = 0) { return comp(c, domain.index(x, y, z)); }
    double comp(int c, int x, int y, int z = 0) const { return comp(c, domain.index(x, y, z)); }
};

struct LabelGrid {
    GridDomain domain;
    std::vector<std::int32_t> labels;  // 0 = background

    LabelGrid() = default;
    explicit LabelGrid(const GridDomain& d, std::int32_t fill = 0)
        : domain(d), labels(d.voxel_count(), fill) {}
    LabelGrid(const GridDomain& d, std::vector<std::int32_t> v);

    std::int32_t& at(int x, int y, int z = 0) { return labels[domain.index(x, y, z)]; }
    std::int32_t at(int x, int y, int z = 0) const { return labels[domain.index(x, y, z)]; }
};

// Throws std::runtime_error naming `context` if any entry is NaN/Inf.
void require_finite(const std::vector<double>& values, const char* context);

}  // namespace elastireg
