#include "elastireg/energy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "elastireg/grid_ops.hpp"
#include "elastireg/parallel.hpp"
#include "elastireg/rng.hpp"

namespace elastireg {

RawElasticity::RawElasticity(double lambda_, double mu_) : lambda(lambda_), mu(mu_) {
    if (lambda < 0.0 || mu < 0.0) {
        throw std::invalid_argument("RawElasticity: lambda and mu must be non-negative");
    }
}

std::optional<double> RawElasticity::ratio() const {
    if (mu > 0.0) return lambda / mu;
    return std::nullopt;
}

ElasticityParams::ElasticityParams(double lambda_a_, double mu_a_)
    : lambda_a(lambda_a_), mu_a(mu_a_) {
    if (lambda_a < 0.0 || mu_a < 0.0 || lambda_a + mu_a > 1.0 + 1e-9) {
        throw std::invalid_argument("ElasticityParams: constraint 0 <= lambda_a + mu_a <= 1 "
                                    "violated by (" +
                                    std::to_string(lambda_a) + ", " + std::to_string(mu_a) + ")");
    }
}

double ElasticityParams::similarity_weight() const {
    return std::max(0.0, 1.0 - lambda_a - mu_a);
}

namespace {

std::size_t line_stride(const GridDomain& d, int axis) {
    switch (axis) {
        case 0: return 1;
        case 1: return static_cast<std::size_t>(d.dims[0]);
        default: return static_cast<std::size_t>(d.dims[0]) * d.dims[1];
    }
}

// Flat index of the k-th line along `axis` (the voxel with coordinate 0 on
// that axis).
std::size_t line_base(const GridDomain& d, int axis, std::size_t k) {
    const std::size_t nx = d.dims[0], ny = d.dims[1];
    switch (axis) {
        case 0: return k * nx;                            // k enumerates (y, z)
        case 1: return (k % nx) + (k / nx) * nx * ny;     // k enumerates (x, z)
        default: return k;                                // k enumerates (x, y)
    }
}

// Separable box filter: out(x) = sum of in over the window of half-width
// `radius` along `axis`, truncated at the line ends. Lines are independent;
// each is processed with a prefix sum, so the result does not depend on the
// thread count.
void box_pass(const GridDomain& d, int axis, int radius, const std::vector<double>& in,
              std::vector<double>& out) {
    const int n = d.dims[axis];
    const std::size_t stride = line_stride(d, axis);
    const std::size_t lines = d.voxel_count() / static_cast<std::size_t>(n);
    par_for(lines, [&](std::size_t k) {
        const std::size_t base = line_base(d, axis, k);
        std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
        for (int i = 0; i < n; ++i) {
            prefix[static_cast<std::size_t>(i) + 1] =
                prefix[static_cast<std::size_t>(i)] + in[base + static_cast<std::size_t>(i) * stride];
        }
        for (int i = 0; i < n; ++i) {
            const int lo = std::max(0, i - radius);
            const int hi = std::min(n - 1, i + radius);
            out[base + static_cast<std::size_t>(i) * stride] =
                prefix[static_cast<std::size_t>(hi) + 1] - prefix[static_cast<std::size_t>(lo)];
        }
    });
}

void box_sum(const GridDomain& d, int radius, std::vector<double>& buf, std::vector<double>& tmp) {
    for (int axis = 0; axis < d.dim; ++axis) {
        box_pass(d, axis, radius, buf, tmp);
        std::swap(buf, tmp);
    }
}

void check_window(const GridDomain& d, int window) {
    if (window < 3 || window % 2 == 0) {
        throw std::invalid_argument("ncc window must be odd and >= 3, got " +
                                    std::to_string(window));
    }
    for (int a = 0; a < d.dim; ++a) {
        if (window > d.dims[a]) {
            throw std::invalid_argument("ncc window " + std::to_string(window) +
                                        " exceeds grid dim " + std::to_string(d.dims[a]));
        }
    }
}

}  // namespace

NccContext::NccContext(const ScalarGrid& fixed, int window) : fixed_(fixed), window_(window) {
    check_window(fixed.domain, window);
    radius_ = window / 2;
    const GridDomain& d = fixed_.domain;
    const std::size_t n = d.voxel_count();

    count_.resize(n);
    const int nx = d.dims[0], ny = d.dims[1];
    par_for(n, [&](std::size_t idx) {
        const int coords[3] = {
            static_cast<int>(idx % static_cast<std::size_t>(nx)),
            static_cast<int>((idx / static_cast<std::size_t>(nx)) % static_cast<std::size_t>(ny)),
            static_cast<int>(idx / (static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)))};
        double c = 1.0;
        for (int a = 0; a < d.dim; ++a) {
            const int lo = std::max(0, coords[a] - radius_);
            const int hi = std::min(d.dims[a] - 1, coords[a] + radius_);
            c *= static_cast<double>(hi - lo + 1);
        }
        count_[idx] = c;
    });

    std::vector<double> tmp(n);
    sum_f_ = fixed_.values;
    box_sum(d, radius_, sum_f_, tmp);

    std::vector<double> ff(n);
    par_for(n, [&](std::size_t i) { ff[i] = fixed_.values[i] * fixed_.values[i]; });
    box_sum(d, radius_, ff, tmp);

    var_f_.resize(n);
    par_for(n, [&](std::size_t i) { var_f_[i] = ff[i] - sum_f_[i] * sum_f_[i] / count_[i]; });
}

NccResult NccContext::evaluate(const ScalarGrid& moving, bool with_gradient) const {
    require_same_domain(fixed_.domain, moving.domain, "ncc");
    const GridDomain& d = fixed_.domain;
    const std::size_t n = d.voxel_count();

    std::vector<double> tmp(n);
    std::vector<double> sum_w = moving.values;
    box_sum(d, radius_, sum_w, tmp);

    std::vector<double> ww(n);
    par_for(n, [&](std::size_t i) { ww[i] = moving.values[i] * moving.values[i]; });
    box_sum(d, radius_, ww, tmp);

    std::vector<double> fw(n);
    par_for(n, [&](std::size_t i) { fw[i] = fixed_.values[i] * moving.values[i]; });
    box_sum(d, radius_, fw, tmp);

    // Per-window coefficients reused by the gradient:
    //   a = 2 cross / (vF vW),  b = a cross / vW.
    std::vector<double> a, b, a_mf, b_mw;
    if (with_gradient) {
        a.resize(n);
        b.resize(n);
        a_mf.resize(n);
        b_mw.resize(n);
    }

    std::vector<double> cc(n);
    par_for(n, [&](std::size_t i) {
        const double cnt = count_[i];
        const double cross = fw[i] - sum_f_[i] * sum_w[i] / cnt;
        const double vf = var_f_[i];
        const double vw = ww[i] - sum_w[i] * sum_w[i] / cnt;
        const bool live = vf > kNccVarianceEps && vw > kNccVarianceEps;
        cc[i] = live ? cross * cross / (vf * vw) : 0.0;
        if (with_gradient) {
            const double ai = live ? 2.0 * cross / (vf * vw) : 0.0;
            const double bi = live ? ai * cross / vw : 0.0;
            a[i] = ai;
            b[i] = bi;
            a_mf[i] = ai * (sum_f_[i] / cnt);
            b_mw[i] = bi * (sum_w[i] / cnt);
        }
    });

    NccResult result;
    result.value = par_sum(n, [&](std::size_t i) { return cc[i]; }) / static_cast<double>(n);

    if (with_gradient) {
        // d ncc / d W_y = (1/N) sum_{p in window(y)} a_p (F_y - mF_p) - b_p (W_y - mW_p).
        box_sum(d, radius_, a, tmp);
        box_sum(d, radius_, a_mf, tmp);
        box_sum(d, radius_, b, tmp);
        box_sum(d, radius_, b_mw, tmp);
        ScalarGrid grad(d);
        const double inv_n = 1.0 / static_cast<double>(n);
        par_for(n, [&](std::size_t i) {
            grad.values[i] = inv_n * (fixed_.values[i] * a[i] - a_mf[i] -
                                      moving.values[i] * b[i] + b_mw[i]);
        });
        result.d_moving = std::move(grad);
    }
    return result;
}

NccResult ncc_local(const ScalarGrid& fixed, const ScalarGrid& moving_warped, int window,
                    bool with_gradient) {
    NccContext ctx(fixed, window);
    return ctx.evaluate(moving_warped, with_gradient);
}

namespace {

// grad_u[component] += adjoint of the forward-difference operator along
// `axis` applied to `g`; `g` must be 0 on the last slice along `axis`.
void accumulate_diff_adjoint(const ScalarGrid& g, int axis, int component,
                             DisplacementField& grad) {
    const GridDomain& d = g.domain;
    const std::size_t stride = line_stride(d, axis);
    const double h = d.spacing[axis];
    const int nx = d.dims[0], ny = d.dims[1];
    par_for(d.voxel_count(), [&](std::size_t idx) {
        const int coords[3] = {
            static_cast<int>(idx % static_cast<std::size_t>(nx)),
            static_cast<int>((idx / static_cast<std::size_t>(nx)) % static_cast<std::size_t>(ny)),
            static_cast<int>(idx / (static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)))};
        const double upstream = coords[axis] > 0 ? g.values[idx - stride] : 0.0;
        grad.comp(component, idx) += (upstream - g.values[idx]) / h;
    });
}

}  // namespace

EnergyValue diffusion_energy(const DisplacementField& field, bool with_gradient) {
    const GridDomain& d = field.domain;
    const std::size_t n = d.voxel_count();
    const double inv_n = 1.0 / static_cast<double>(n);

    EnergyValue result;
    if (with_gradient) result.gradient = DisplacementField(d);

    for (int axis = 0; axis < d.dim; ++axis) {
        for (int comp = 0; comp < d.dim; ++comp) {
            ScalarGrid g = forward_diff(field, comp, axis);
            result.value += par_sum(n, [&](std::size_t i) { return g.values[i] * g.values[i]; });
            if (with_gradient) {
                par_for(n, [&](std::size_t i) { g.values[i] *= 2.0 * inv_n; });
                accumulate_diff_adjoint(g, axis, comp, *result.gradient);
            }
        }
    }
    result.value *= inv_n;
    return result;
}

namespace {

struct StrainGrids {
    // diff[axis * dim + comp] = d u_comp / d x_axis
    std::vector<ScalarGrid> diff;
    ScalarGrid divergence;
};

StrainGrids compute_strain(const DisplacementField& field) {
    const GridDomain& d = field.domain;
    StrainGrids s;
    s.diff.resize(static_cast<std::size_t>(d.dim) * d.dim);
    for (int axis = 0; axis < d.dim; ++axis) {
        for (int comp = 0; comp < d.dim; ++comp) {
            s.diff[static_cast<std::size_t>(axis) * d.dim + comp] =
                forward_diff(field, comp, axis);
        }
    }
    s.divergence = ScalarGrid(d);
    par_for(d.voxel_count(), [&](std::size_t i) {
        double div = 0.0;
        for (int a = 0; a < d.dim; ++a) {
            div += s.diff[static_cast<std::size_t>(a) * d.dim + a].values[i];
        }
        s.divergence.values[i] = div;
    });
    return s;
}

double elastic_density_at(const StrainGrids& s, int dim, std::size_t i, double lambda, double mu) {
    double shear = 0.0;
    for (int a = 0; a < dim; ++a) {
        for (int c = 0; c < dim; ++c) {
            const double sym = s.diff[static_cast<std::size_t>(a) * dim + c].values[i] +
                               s.diff[static_cast<std::size_t>(c) * dim + a].values[i];
            shear += sym * sym;
        }
    }
    const double div = s.divergence.values[i];
    return 0.25 * mu * shear + 0.5 * lambda * div * div;
}

}  // namespace

EnergyValue elastic_energy(const DisplacementField& field, const RawElasticity& params,
                           bool with_gradient) {
    const GridDomain& d = field.domain;
    const std::size_t n = d.voxel_count();
    const double inv_n = 1.0 / static_cast<double>(n);
    const StrainGrids s = compute_strain(field);

    EnergyValue result;
    result.value =
        par_sum(n, [&](std::size_t i) { return elastic_density_at(s, d.dim, i, params.lambda,
                                                                  params.mu); }) *
        inv_n;

    if (with_gradient) {
        result.gradient = DisplacementField(d);
        const int nx = d.dims[0], ny = d.dims[1];
        for (int axis = 0; axis < d.dim; ++axis) {
            for (int comp = 0; comp < d.dim; ++comp) {
                // dE/dD_{axis,comp} = (1/N)(mu (D_{axis,comp} + D_{comp,axis})
                //                           + lambda div * [axis == comp]),
                // zeroed where D_{axis,comp} itself is a truncated stencil
                // (last slice along `axis`) and thus not a function of u.
                ScalarGrid g(d);
                const ScalarGrid& dac = s.diff[static_cast<std::size_t>(axis) * d.dim + comp];
                const ScalarGrid& dca = s.diff[static_cast<std::size_t>(comp) * d.dim + axis];
                const bool diag = axis == comp;
                const int n_axis = d.dims[axis];
                par_for(n, [&](std::size_t i) {
                    const int coords[3] = {
                        static_cast<int>(i % static_cast<std::size_t>(nx)),
                        static_cast<int>((i / static_cast<std::size_t>(nx)) %
                                         static_cast<std::size_t>(ny)),
                        static_cast<int>(i / (static_cast<std::size_t>(nx) *
                                              static_cast<std::size_t>(ny)))};
                    if (coords[axis] + 1 >= n_axis) {
                        g.values[i] = 0.0;
                        return;
                    }
                    double v = params.mu * (dac.values[i] + dca.values[i]);
                    if (diag) v += params.lambda * s.divergence.values[i];
                    g.values[i] = v * inv_n;
                });
                accumulate_diff_adjoint(g, axis, comp, *result.gradient);
            }
        }
    }
    return result;
}

ScalarGrid diffusion_energy_density(const DisplacementField& field) {
    const GridDomain& d = field.domain;
    ScalarGrid out(d);
    for (int axis = 0; axis < d.dim; ++axis) {
        for (int comp = 0; comp < d.dim; ++comp) {
            const ScalarGrid g = forward_diff(field, comp, axis);
            par_for(d.voxel_count(),
                    [&](std::size_t i) { out.values[i] += g.values[i] * g.values[i]; });
        }
    }
    return out;
}

ScalarGrid elastic_energy_density(const DisplacementField& field, const RawElasticity& params) {
    const GridDomain& d = field.domain;
    const StrainGrids s = compute_strain(field);
    ScalarGrid out(d);
    par_for(d.voxel_count(), [&](std::size_t i) {
        out.values[i] = elastic_density_at(s, d.dim, i, params.lambda, params.mu);
    });
    return out;
}

EnergyValue composite_loss_with_context(const NccContext& ctx, const ScalarGrid& moving,
                                        const DisplacementField& field, double sim_weight,
                                        const RawElasticity& reg, bool with_gradient,
                                        LossTerms* terms) {
    require_same_domain(ctx.domain(), moving.domain, "composite loss");
    require_same_domain(ctx.domain(), field.domain, "composite loss");

    const WarpResult warped = with_gradient
                                  ? warp_with_gradient(moving, field)
                                  : WarpResult{warp(moving, field), {}};
    const NccResult ncc = ctx.evaluate(warped.value, with_gradient);
    const EnergyValue elastic = elastic_energy(field, reg, with_gradient);

    EnergyValue result;
    const double dissimilarity = 1.0 - ncc.value;
    result.value = sim_weight * dissimilarity + elastic.value;

    if (terms) {
        terms->loss = result.value;
        terms->ncc = ncc.value;
        terms->dissimilarity = dissimilarity;
        terms->regularizer = elastic.value;
        terms->similarity_weight = sim_weight;
    }

    if (with_gradient) {
        DisplacementField grad = *elastic.gradient;
        const std::size_t n = moving.domain.voxel_count();
        for (int c = 0; c < moving.domain.dim; ++c) {
            const ScalarGrid& dwc = warped.d_field[c];
            const ScalarGrid& dncc = *ncc.d_moving;
            par_for(n, [&](std::size_t i) {
                grad.comp(c, i) -= sim_weight * dncc.values[i] * dwc.values[i];
            });
        }
        result.gradient = std::move(grad);
    }
    return result;
}

EnergyValue composite_loss_eq4(const ScalarGrid& fixed, const ScalarGrid& moving,
                               const DisplacementField& field, double alpha,
                               const RawElasticity& params, int window, bool with_gradient,
                               LossTerms* terms) {
    if (alpha < 0.0 || alpha > 1.0) {
        throw std::invalid_argument("alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    // alpha * E(lambda, mu) == E(alpha lambda, alpha mu): the energy is linear
    // in its parameters.
    const RawElasticity scaled(alpha * params.lambda, alpha * params.mu);
    const NccContext ctx(fixed, window);
    return composite_loss_with_context(ctx, moving, field, 1.0 - alpha, scaled, with_gradient,
                                       terms);
}

EnergyValue composite_loss_eq5(const ScalarGrid& fixed, const ScalarGrid& moving,
                               const DisplacementField& field, const ElasticityParams& params,
                               int window, bool with_gradient, LossTerms* terms) {
    const RawElasticity reg(params.lambda_a, params.mu_a);
    const NccContext ctx(fixed, window);
    return composite_loss_with_context(ctx, moving, field, params.similarity_weight(), reg,
                                       with_gradient, terms);
}

double grad_check(const EnergyFn& energy, const DisplacementField& field, double h,
                  int sample_count, std::uint64_t seed) {
    if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
    const EnergyValue base = energy(field, true);
    if (!base.gradient) throw std::invalid_argument("grad_check: energy returned no gradient");

    Rng rng(seed);
    const std::size_t n = field.voxel_count();
    double max_err = 0.0;
    DisplacementField probe = field;
    for (int s = 0; s < sample_count; ++s) {
        const std::size_t idx = rng.next_below(n);
        const int comp = static_cast<int>(rng.next_below(static_cast<std::size_t>(field.domain.dim)));
        const double original = probe.comp(comp, idx);

        probe.comp(comp, idx) = original + h;
        const double plus = energy(probe, false).value;
        probe.comp(comp, idx) = original - h;
        const double minus = energy(probe, false).value;
        probe.comp(comp, idx) = original;

        const double fd = (plus - minus) / (2.0 * h);
        const double analytic = base.gradient->comp(comp, idx);
        const double err = std::abs(analytic - fd) / (std::abs(analytic) + 1e-12);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace elastireg
