#include "elastireg/serial_ref.hpp"

#include <algorithm>
#include <cmath>

#include "elastireg/grid_ops.hpp"

namespace elastireg::serial {

namespace {
constexpr double kVarianceEps = 1e-5;
}

ScalarGrid warp(const ScalarGrid& image, const DisplacementField& field) {
    require_same_domain(image.domain, field.domain, "warp");
    const GridDomain& d = image.domain;
    ScalarGrid out(d);
    for (int z = 0; z < d.dims[2]; ++z) {
        for (int y = 0; y < d.dims[1]; ++y) {
            for (int x = 0; x < d.dims[0]; ++x) {
                const std::size_t idx = d.index(x, y, z);
                const double cx = x + field.comp(0, idx);
                const double cy = y + field.comp(1, idx);
                const double cz = d.dim == 3 ? z + field.comp(2, idx) : 0.0;
                out.values[idx] = sample_linear(image, cx, cy, cz);
            }
        }
    }
    return out;
}

ScalarGrid forward_diff(const DisplacementField& field, int component, int axis) {
    const GridDomain& d = field.domain;
    ScalarGrid out(d);
    for (int z = 0; z < d.dims[2]; ++z) {
        for (int y = 0; y < d.dims[1]; ++y) {
            for (int x = 0; x < d.dims[0]; ++x) {
                int nb[3] = {x, y, z};
                nb[axis] += 1;
                if (nb[axis] >= d.dims[axis]) continue;
                const double a = field.comp(component, d.index(x, y, z));
                const double b = field.comp(component, d.index(nb[0], nb[1], nb[2]));
                out.at(x, y, z) = (b - a) / d.spacing[axis];
            }
        }
    }
    return out;
}

ScalarGrid jacobian_determinant(const DisplacementField& field) {
    const GridDomain& d = field.domain;
    ScalarGrid out(d);
    for (int z = 0; z < d.dims[2]; ++z) {
        for (int y = 0; y < d.dims[1]; ++y) {
            for (int x = 0; x < d.dims[0]; ++x) {
                double J[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
                for (int j = 0; j < d.dim; ++j) {
                    int nb[3] = {x, y, z};
                    nb[j] += 1;
                    if (nb[j] >= d.dims[j]) continue;
                    for (int i = 0; i < d.dim; ++i) {
                        J[i][j] += field.comp(i, d.index(nb[0], nb[1], nb[2])) -
                                   field.comp(i, d.index(x, y, z));
                    }
                }
                out.at(x, y, z) = d.dim == 2
                                      ? J[0][0] * J[1][1] - J[0][1] * J[1][0]
                                      : J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                            J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                            J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
            }
        }
    }
    return out;
}

double ncc_value(const ScalarGrid& fixed, const ScalarGrid& moving, int window) {
    require_same_domain(fixed.domain, moving.domain, "ncc");
    const GridDomain& d = fixed.domain;
    const int r = window / 2;
    double total = 0.0;
    for (int z = 0; z < d.dims[2]; ++z) {
        for (int y = 0; y < d.dims[1]; ++y) {
            for (int x = 0; x < d.dims[0]; ++x) {
                const int zlo = d.dim == 3 ? std::max(0, z - r) : 0;
                const int zhi = d.dim == 3 ? std::min(d.dims[2] - 1, z + r) : 0;
                int count = 0;
                double mf = 0.0, mw = 0.0;
                for (int zz = zlo; zz <= zhi; ++zz) {
                    for (int yy = std::max(0, y - r); yy <= std::min(d.dims[1] - 1, y + r); ++yy) {
                        for (int xx = std::max(0, x - r); xx <= std::min(d.dims[0] - 1, x + r);
                             ++xx) {
                            mf += fixed.at(xx, yy, zz);
                            mw += moving.at(xx, yy, zz);
                            ++count;
                        }
                    }
                }
                mf /= count;
                mw /= count;
                double vf = 0.0, vw = 0.0, cross = 0.0;
                for (int zz = zlo; zz <= zhi; ++zz) {
                    for (int yy = std::max(0, y - r); yy <= std::min(d.dims[1] - 1, y + r); ++yy) {
                        for (int xx = std::max(0, x - r); xx <= std::min(d.dims[0] - 1, x + r);
                             ++xx) {
                            const double df = fixed.at(xx, yy, zz) - mf;
                            const double dw = moving.at(xx, yy, zz) - mw;
                            vf += df * df;
                            vw += dw * dw;
                            cross += df * dw;
                        }
                    }
                }
                if (vf > kVarianceEps && vw > kVarianceEps) {
                    total += cross * cross / (vf * vw);
                }
            }
        }
    }
    return total / static_cast<double>(d.voxel_count());
}

double diffusion_value(const DisplacementField& field) {
    const GridDomain& d = field.domain;
    double sum = 0.0;
    for (int axis = 0; axis < d.dim; ++axis) {
        for (int comp = 0; comp < d.dim; ++comp) {
            const ScalarGrid g = serial::forward_diff(field, comp, axis);
            for (double v : g.values) sum += v * v;
        }
    }
    return sum / static_cast<double>(d.voxel_count());
}

double elastic_value(const DisplacementField& field, double lambda, double mu) {
    const GridDomain& d = field.domain;
    std::vector<ScalarGrid> diff(static_cast<std::size_t>(d.dim) * d.dim);
    for (int axis = 0; axis < d.dim; ++axis) {
        for (int comp = 0; comp < d.dim; ++comp) {
            diff[static_cast<std::size_t>(axis) * d.dim + comp] =
                serial::forward_diff(field, comp, axis);
        }
    }
    double sum = 0.0;
    for (std::size_t idx = 0; idx < d.voxel_count(); ++idx) {
        double shear = 0.0, div = 0.0;
        for (int i = 0; i < d.dim; ++i) {
            div += diff[static_cast<std::size_t>(i) * d.dim + i].values[idx];
            for (int j = 0; j < d.dim; ++j) {
                const double s = diff[static_cast<std::size_t>(i) * d.dim + j].values[idx] +
                                 diff[static_cast<std::size_t>(j) * d.dim + i].values[idx];
                shear += s * s;
            }
        }
        sum += 0.25 * mu * shear + 0.5 * lambda * div * div;
    }
    return sum / static_cast<double>(d.voxel_count());
}

}  // namespace elastireg::serial
