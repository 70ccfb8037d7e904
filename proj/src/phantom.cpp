#include "elastireg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "elastireg/grid_ops.hpp"
#include "elastireg/rng.hpp"

namespace elastireg {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
    double v[3] = {0, 0, 0};
    double& operator[](int i) { return v[i]; }
    double operator[](int i) const { return v[i]; }
};

struct Blob {
    Vec3 center;  // voxel coordinates
    double sigma = 1.0;
    double weight = 1.0;
};

// Analytic ingredients of a phantom: the displacement t(x), its inverse map,
// the intensity pattern, and the label predicate, all in voxel coordinates.
struct Analytic {
    const PhantomSpec* spec = nullptr;
    Vec3 center;
    std::vector<Blob> blobs;
    double label_radius = 0.0;
    double period = 8.0;
    Vec3 bump_center;
    Vec3 bump_amp;
    double bump_sigma = 1.0;
    double inv_affine[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    bool zero_field = false;

    Vec3 displacement(const Vec3& x) const {
        Vec3 t;
        if (zero_field) return t;
        const PhantomSpec& s = *spec;
        const int dim = s.domain.dim;
        switch (s.family) {
            case PhantomSpec::FieldFamily::Affine: {
                for (int i = 0; i < dim; ++i) {
                    double acc = s.shift[static_cast<std::size_t>(i)];
                    for (int j = 0; j < dim; ++j) {
                        const double a = s.affine[static_cast<std::size_t>(3 * i + j)];
                        acc += (a - (i == j ? 1.0 : 0.0)) * (x[j] - center[j]);
                    }
                    t[i] = acc;
                }
                break;
            }
            case PhantomSpec::FieldFamily::Rotation: {
                const double th = s.angle_deg * kPi / 180.0;
                const double c = std::cos(th), sn = std::sin(th);
                const double dx = x[0] - center[0], dy = x[1] - center[1];
                t[0] = c * dx - sn * dy - dx;
                t[1] = sn * dx + c * dy - dy;
                break;
            }
            case PhantomSpec::FieldFamily::GaussianBump: {
                double r2 = 0.0;
                for (int a = 0; a < dim; ++a) {
                    const double da = x[a] - bump_center[a];
                    r2 += da * da;
                }
                const double g = std::exp(-r2 / (2.0 * bump_sigma * bump_sigma));
                for (int a = 0; a < dim; ++a) t[a] = bump_amp[a] * g;
                break;
            }
        }
        return t;
    }

    Vec3 forward_map(const Vec3& x) const {
        const Vec3 t = displacement(x);
        Vec3 y;
        for (int a = 0; a < 3; ++a) y[a] = x[a] + t[a];
        return y;
    }

    Vec3 inverse_map(const Vec3& y) const {
        if (zero_field) return y;
        const PhantomSpec& s = *spec;
        const int dim = s.domain.dim;
        if (s.allow_folding && s.family == PhantomSpec::FieldFamily::GaussianBump) {
            // A folding map has no global inverse; fall back to the
            // first-order pullback so stress phantoms stay constructible.
            const Vec3 t = displacement(y);
            Vec3 x = y;
            for (int a = 0; a < dim; ++a) x[a] = y[a] - t[a];
            return x;
        }
        if (s.family == PhantomSpec::FieldFamily::Affine ||
            s.family == PhantomSpec::FieldFamily::Rotation) {
            Vec3 x;
            for (int i = 0; i < dim; ++i) {
                double acc = center[i];
                for (int j = 0; j < dim; ++j) {
                    acc += inv_affine[3 * i + j] *
                           (y[j] - center[j] - shift_for(j));
                }
                x[i] = acc;
            }
            return x;
        }
        // Fixed-point iteration x <- y - t(x); contraction because the field
        // passes the invertibility check (|grad t| < 1).
        Vec3 x = y;
        for (int iter = 0; iter < 200; ++iter) {
            const Vec3 t = displacement(x);
            double delta = 0.0;
            for (int a = 0; a < dim; ++a) {
                const double nx = y[a] - t[a];
                delta = std::max(delta, std::abs(nx - x[a]));
                x[a] = nx;
            }
            if (delta < 1e-13) return x;
        }
        throw std::runtime_error("make_phantom: inverse-map iteration did not converge; "
                                 "the requested field is too strong");
    }

    double shift_for(int j) const {
        const PhantomSpec& s = *spec;
        if (s.family == PhantomSpec::FieldFamily::Rotation) return 0.0;
        return s.shift[static_cast<std::size_t>(j)];
    }

    double pattern(const Vec3& x) const {
        const PhantomSpec& s = *spec;
        if (s.pattern == PhantomSpec::Pattern::GaussianBlobs) {
            double v = 0.0;
            for (const Blob& b : blobs) {
                double r2 = 0.0;
                for (int a = 0; a < s.domain.dim; ++a) {
                    const double da = x[a] - b.center[a];
                    r2 += da * da;
                }
                v += b.weight * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
            }
            return v;
        }
        double v = 1.0;
        for (int a = 0; a < s.domain.dim; ++a) {
            v *= std::sin(2.0 * kPi * x[a] / period);
        }
        return 0.5 * (1.0 + v);
    }

    std::int32_t label(const Vec3& x) const {
        const PhantomSpec& s = *spec;
        if (s.pattern == PhantomSpec::Pattern::GaussianBlobs) {
            double r2 = 0.0;
            for (int a = 0; a < s.domain.dim; ++a) {
                const double da = x[a] - blobs.front().center[a];
                r2 += da * da;
            }
            return r2 <= label_radius * label_radius ? 1 : 0;
        }
        return pattern(x) > 0.8 ? 1 : 0;
    }
};

void invert_affine(const PhantomSpec& s, double out[9]) {
    double A[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    if (s.family == PhantomSpec::FieldFamily::Rotation) {
        const double th = s.angle_deg * kPi / 180.0;
        A[0] = std::cos(th);
        A[1] = -std::sin(th);
        A[3] = std::sin(th);
        A[4] = std::cos(th);
    } else {
        std::copy(s.affine.begin(), s.affine.end(), A);
    }
    const int dim = s.domain.dim;
    if (dim == 2) {
        const double det = A[0] * A[4] - A[1] * A[3];
        if (std::abs(det) < 1e-12) {
            throw std::invalid_argument("make_phantom: affine matrix is singular");
        }
        out[0] = A[4] / det;
        out[1] = -A[1] / det;
        out[3] = -A[3] / det;
        out[4] = A[0] / det;
        out[8] = 1.0;
        out[2] = out[5] = out[6] = out[7] = 0.0;
    } else {
        const double det = A[0] * (A[4] * A[8] - A[5] * A[7]) -
                           A[1] * (A[3] * A[8] - A[5] * A[6]) +
                           A[2] * (A[3] * A[7] - A[4] * A[6]);
        if (std::abs(det) < 1e-12) {
            throw std::invalid_argument("make_phantom: affine matrix is singular");
        }
        out[0] = (A[4] * A[8] - A[5] * A[7]) / det;
        out[1] = (A[2] * A[7] - A[1] * A[8]) / det;
        out[2] = (A[1] * A[5] - A[2] * A[4]) / det;
        out[3] = (A[5] * A[6] - A[3] * A[8]) / det;
        out[4] = (A[0] * A[8] - A[2] * A[6]) / det;
        out[5] = (A[2] * A[3] - A[0] * A[5]) / det;
        out[6] = (A[3] * A[7] - A[4] * A[6]) / det;
        out[7] = (A[1] * A[6] - A[0] * A[7]) / det;
        out[8] = (A[0] * A[4] - A[1] * A[3]) / det;
    }
}

bool is_identity_field(const PhantomSpec& s) {
    switch (s.family) {
        case PhantomSpec::FieldFamily::GaussianBump: return s.amplitude == 0.0;
        case PhantomSpec::FieldFamily::Rotation: return s.angle_deg == 0.0;
        case PhantomSpec::FieldFamily::Affine: {
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    if (s.affine[static_cast<std::size_t>(3 * i + j)] !=
                        (i == j ? 1.0 : 0.0)) {
                        return false;
                    }
                }
            }
            return s.shift[0] == 0.0 && s.shift[1] == 0.0 && s.shift[2] == 0.0;
        }
    }
    return false;
}

std::vector<Blob> place_blobs(const PhantomSpec& s, Rng& rng) {
    const GridDomain& d = s.domain;
    int min_dim = d.dims[0];
    for (int a = 1; a < d.dim; ++a) min_dim = std::min(min_dim, d.dims[a]);

    std::vector<Blob> blobs;
    Blob primary;
    primary.sigma = 0.22 * min_dim;
    primary.weight = 1.0;
    for (int a = 0; a < d.dim; ++a) {
        primary.center[a] = 0.5 * (d.dims[a] - 1) + rng.uniform(-1.5, 1.5);
    }
    blobs.push_back(primary);

    const double margin = 0.16 * min_dim + 2.0;
    for (int k = 1; k < s.blob_count; ++k) {
        Blob b;
        b.sigma = rng.uniform(2.5, 4.5);
        b.weight = rng.uniform(0.5, 0.9) * (k % 2 == 0 ? 1.0 : -1.0);
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            for (int a = 0; a < d.dim; ++a) {
                b.center[a] = rng.uniform(margin, d.dims[a] - 1 - margin);
            }
            placed = true;
            for (const Blob& other : blobs) {
                double dist_sq = 0.0;
                for (int a = 0; a < d.dim; ++a) {
                    const double da = b.center[a] - other.center[a];
                    dist_sq += da * da;
                }
                if (std::sqrt(dist_sq) < 0.8 * (b.sigma + other.sigma)) {
                    placed = false;
                    break;
                }
            }
        }
        if (placed) blobs.push_back(b);
    }
    return blobs;
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec) {
    const GridDomain& d = spec.domain;
    if (spec.blob_count < 1) throw std::invalid_argument("make_phantom: blob_count must be >= 1");
    if (spec.amplitude < 0.0) throw std::invalid_argument("make_phantom: amplitude must be >= 0");

    int min_dim = d.dims[0];
    for (int a = 1; a < d.dim; ++a) min_dim = std::min(min_dim, d.dims[a]);

    Analytic an;
    an.spec = &spec;
    for (int a = 0; a < d.dim; ++a) an.center[a] = 0.5 * (d.dims[a] - 1);
    an.period = spec.checker_period > 0.0 ? spec.checker_period : min_dim / 4.0;
    an.zero_field = is_identity_field(spec);

    Rng rng(spec.seed);
    if (spec.pattern == PhantomSpec::Pattern::GaussianBlobs) {
        an.blobs = place_blobs(spec, rng);
        an.label_radius = 1.9 * an.blobs.front().sigma;
    }

    if (spec.family == PhantomSpec::FieldFamily::GaussianBump) {
        an.bump_sigma = spec.bump_sigma > 0.0 ? spec.bump_sigma : 0.18 * min_dim;
        Rng field_rng(spec.field_seed != 0 ? spec.field_seed : spec.seed);
        for (int a = 0; a < d.dim; ++a) {
            an.bump_center[a] = an.center[a] + field_rng.uniform(-0.06, 0.06) * min_dim;
        }
        const double dir_raw[3] = {1.0, -0.7, 0.5};
        double norm = 0.0;
        for (int a = 0; a < d.dim; ++a) norm += dir_raw[a] * dir_raw[a];
        norm = std::sqrt(norm);
        for (int a = 0; a < d.dim; ++a) an.bump_amp[a] = spec.amplitude * dir_raw[a] / norm;
    } else {
        invert_affine(spec, an.inv_affine);
    }

    Phantom out;
    out.fixed = ScalarGrid(d);
    out.moving = ScalarGrid(d);
    out.true_field = DisplacementField(d);
    out.fixed_labels = LabelGrid(d);
    out.moving_labels = LabelGrid(d);

    const std::size_t n = d.voxel_count();
    const int nx = d.dims[0], ny = d.dims[1];
    auto voxel_pos = [&](std::size_t idx) {
        Vec3 x;
        x[0] = static_cast<double>(idx % static_cast<std::size_t>(nx));
        x[1] = static_cast<double>((idx / static_cast<std::size_t>(nx)) %
                                   static_cast<std::size_t>(ny));
        x[2] = static_cast<double>(idx / (static_cast<std::size_t>(nx) *
                                          static_cast<std::size_t>(ny)));
        return x;
    };

    for (std::size_t idx = 0; idx < n; ++idx) {
        const Vec3 x = voxel_pos(idx);
        out.fixed.values[idx] = an.pattern(x);
        out.fixed_labels.labels[idx] = an.label(x);
        const Vec3 t = an.displacement(x);
        for (int c = 0; c < d.dim; ++c) out.true_field.comp(c, idx) = t[c];
    }

    if (!spec.allow_folding) {
        const ScalarGrid det = jacobian_determinant(out.true_field);
        double min_det = det.values.front();
        for (double v : det.values) min_det = std::min(min_det, v);
        if (min_det <= 0.0) {
            throw std::invalid_argument(
                "make_phantom: requested field folds (min jacobian determinant " +
                std::to_string(min_det) + "); set allow_folding to generate it anyway");
        }
    }

    for (std::size_t idx = 0; idx < n; ++idx) {
        const Vec3 x = voxel_pos(idx);
        const Vec3 pre = an.zero_field ? x : an.inverse_map(x);
        out.moving.values[idx] = an.pattern(pre);
        out.moving_labels.labels[idx] = an.label(pre);
    }

    // Keypoints: analytic feature centres (blob centres / checker maxima) in
    // the fixed frame and their images under the true field.
    std::vector<Vec3> centers;
    if (spec.pattern == PhantomSpec::Pattern::GaussianBlobs) {
        for (const Blob& b : an.blobs) centers.push_back(b.center);
    } else {
        const double T = an.period;
        for (int phase = 0; phase < 2; ++phase) {
            const double off = (phase == 0 ? 0.25 : 0.75) * T;
            for (double cy = off; cy < d.dims[1] - 1 && centers.size() < 12; cy += T) {
                for (double cx = off; cx < d.dims[0] - 1 && centers.size() < 12; cx += T) {
                    Vec3 c;
                    c[0] = cx;
                    c[1] = cy;
                    if (d.dim == 3) c[2] = 0.5 * (d.dims[2] - 1);
                    centers.push_back(c);
                }
            }
        }
    }

    for (const Vec3& c : centers) {
        const Vec3 mapped = an.forward_map(c);
        bool inside = true;
        for (int a = 0; a < d.dim; ++a) {
            if (mapped[a] < 0.0 || mapped[a] > d.dims[a] - 1) inside = false;
        }
        if (!inside) continue;  // feature pushed out of the moving frame
        std::array<double, 3> pf{0, 0, 0}, pm{0, 0, 0};
        for (int a = 0; a < d.dim; ++a) {
            pf[static_cast<std::size_t>(a)] = c[a] * d.spacing[a];
            pm[static_cast<std::size_t>(a)] = mapped[a] * d.spacing[a];
        }
        out.fixed_keypoints.points_mm.push_back(pf);
        out.moving_keypoints.points_mm.push_back(pm);
    }
    if (out.fixed_keypoints.size() == 0) {
        throw std::runtime_error("make_phantom: no keypoints survived the domain check");
    }

    return out;
}

}  // namespace elastireg
