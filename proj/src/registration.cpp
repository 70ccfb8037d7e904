#include "elastireg/registration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "elastireg/grid_ops.hpp"
#include "elastireg/parallel.hpp"

namespace elastireg {

void OptimizerConfig::validate() const {
    // 0 is allowed: the optimizer then leaves its parameters untouched.
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("adam betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
    if (pyramid_levels < 1) throw std::invalid_argument("pyramid_levels must be >= 1");
    if (convergence_tol < 0.0) throw std::invalid_argument("convergence_tol must be >= 0");
}

void adam_step_flat(std::vector<double>& params, const std::vector<double>& gradient,
                    AdamState& state, const OptimizerConfig& config) {
    const std::size_t n = params.size();
    if (gradient.size() != n) {
        throw std::invalid_argument("adam_step: gradient size does not match parameters");
    }
    if (state.m.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    } else if (state.m.size() != n || state.v.size() != n) {
        throw std::invalid_argument("adam_step: moment buffers do not match the parameter size");
    }

    for (double g : gradient) {
        if (!std::isfinite(g)) {
            throw std::runtime_error("adam_step: non-finite gradient at step " +
                                     std::to_string(state.t + 1));
        }
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    const double lr = config.learning_rate;
    const double b1 = config.beta1, b2 = config.beta2, eps = config.epsilon;

    par_for(n, [&](std::size_t i) {
        const double g = gradient[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    });
}

void adam_step(DisplacementField& field, const DisplacementField& gradient, AdamState& state,
               const OptimizerConfig& config) {
    require_same_domain(field.domain, gradient.domain, "adam_step");
    adam_step_flat(field.vectors, gradient.vectors, state, config);
}

std::vector<ScalarGrid> build_pyramid(const ScalarGrid& grid, int levels) {
    if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
    const GridDomain& d = grid.domain;
    const int need = 1 << (levels - 1);
    for (int a = 0; a < d.dim; ++a) {
        // Singleton axes pass through every level untouched.
        if (d.dims[a] > 1 && d.dims[a] < need) {
            throw std::invalid_argument("build_pyramid: dim " + std::to_string(d.dims[a]) +
                                        " too small for " + std::to_string(levels) + " levels");
        }
    }

    std::vector<ScalarGrid> pyramid;
    pyramid.push_back(grid);
    for (int level = 1; level < levels; ++level) {
        const ScalarGrid& fine = pyramid.back();
        const GridDomain& fd = fine.domain;
        std::array<int, 3> cdims{1, 1, 1};
        std::array<double, 3> cspacing{1.0, 1.0, 1.0};
        for (int a = 0; a < fd.dim; ++a) {
            cdims[a] = (fd.dims[a] + 1) / 2;
            cspacing[a] = fd.spacing[a] * static_cast<double>(fd.dims[a]) / cdims[a];
        }
        GridDomain cd(fd.dim, cdims, cspacing);
        ScalarGrid coarse(cd);
        const int pairs = fd.dim == 3 ? 8 : 4;
        par_for(cd.voxel_count(), [&](std::size_t idx) {
            const int cx = static_cast<int>(idx % static_cast<std::size_t>(cd.dims[0]));
            const int cy = static_cast<int>((idx / static_cast<std::size_t>(cd.dims[0])) %
                                            static_cast<std::size_t>(cd.dims[1]));
            const int cz = static_cast<int>(idx / (static_cast<std::size_t>(cd.dims[0]) *
                                                   static_cast<std::size_t>(cd.dims[1])));
            double acc = 0.0;
            for (int k = 0; k < pairs; ++k) {
                const int fx = std::min(2 * cx + (k & 1), fd.dims[0] - 1);
                const int fy = std::min(2 * cy + ((k >> 1) & 1), fd.dims[1] - 1);
                const int fz = fd.dim == 3 ? std::min(2 * cz + ((k >> 2) & 1), fd.dims[2] - 1) : 0;
                acc += fine.at(fx, fy, fz);
            }
            coarse.values[idx] = acc / pairs;
        });
        pyramid.push_back(std::move(coarse));
    }
    return pyramid;
}

DisplacementField upsample_field(const DisplacementField& coarse, const GridDomain& fine) {
    if (coarse.domain.dim != fine.dim) {
        throw std::invalid_argument("upsample_field: dimensionality mismatch");
    }
    DisplacementField out(fine);
    const GridDomain& cd = coarse.domain;
    double scale[3] = {1.0, 1.0, 1.0}, ratio[3] = {1.0, 1.0, 1.0};
    for (int a = 0; a < fine.dim; ++a) {
        ratio[a] = static_cast<double>(cd.dims[a]) / fine.dims[a];
        scale[a] = static_cast<double>(fine.dims[a]) / cd.dims[a];
    }
    par_for(fine.voxel_count(), [&](std::size_t idx) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(fine.dims[0]));
        const int y = static_cast<int>((idx / static_cast<std::size_t>(fine.dims[0])) %
                                       static_cast<std::size_t>(fine.dims[1]));
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(fine.dims[0]) *
                                              static_cast<std::size_t>(fine.dims[1])));
        const double cx = (x + 0.5) * ratio[0] - 0.5;
        const double cy = (y + 0.5) * ratio[1] - 0.5;
        const double cz = fine.dim == 3 ? (z + 0.5) * ratio[2] - 0.5 : 0.0;
        for (int c = 0; c < fine.dim; ++c) {
            out.comp(c, idx) = scale[c] * sample_field_linear(coarse, c, cx, cy, cz);
        }
    });
    return out;
}

namespace {

LossTerms eval_step(const NccContext& ctx, const ScalarGrid& moving, const DisplacementField& u,
                    const ElasticityParams& params, RegularizerKind kind, bool with_gradient,
                    DisplacementField* gradient) {
    LossTerms terms;
    if (kind == RegularizerKind::Elastic) {
        const RawElasticity reg(params.lambda_a, params.mu_a);
        EnergyValue ev = composite_loss_with_context(ctx, moving, u, params.similarity_weight(),
                                                     reg, with_gradient, &terms);
        if (with_gradient) *gradient = std::move(*ev.gradient);
        return terms;
    }

    // Diffusion variant: sim_weight * (1 - NCC) + (lambda_a + mu_a) * E_diff.
    const double reg_weight = params.lambda_a + params.mu_a;
    const double sim_weight = params.similarity_weight();
    const WarpResult warped = with_gradient ? warp_with_gradient(moving, u)
                                            : WarpResult{warp(moving, u), {}};
    const NccResult ncc = ctx.evaluate(warped.value, with_gradient);
    const EnergyValue diff = diffusion_energy(u, with_gradient);

    terms.ncc = ncc.value;
    terms.dissimilarity = 1.0 - ncc.value;
    terms.regularizer = reg_weight * diff.value;
    terms.similarity_weight = sim_weight;
    terms.loss = sim_weight * terms.dissimilarity + terms.regularizer;

    if (with_gradient) {
        DisplacementField grad = *diff.gradient;
        const std::size_t n = moving.domain.voxel_count();
        for (std::size_t i = 0; i < grad.vectors.size(); ++i) grad.vectors[i] *= reg_weight;
        for (int c = 0; c < moving.domain.dim; ++c) {
            const ScalarGrid& dwc = warped.d_field[c];
            const ScalarGrid& dncc = *ncc.d_moving;
            par_for(n, [&](std::size_t i) {
                grad.comp(c, i) -= sim_weight * dncc.values[i] * dwc.values[i];
            });
        }
        *gradient = std::move(grad);
    }
    return terms;
}

}  // namespace

RegistrationResult register_pair(const ScalarGrid& fixed, const ScalarGrid& moving,
                                 const ElasticityParams& params, const OptimizerConfig& config) {
    config.validate();
    require_same_domain(fixed.domain, moving.domain, "register_pair");

    const std::vector<ScalarGrid> fixed_pyr = build_pyramid(fixed, config.pyramid_levels);
    const std::vector<ScalarGrid> moving_pyr = build_pyramid(moving, config.pyramid_levels);

    RegistrationResult result;
    result.lambda_a = params.lambda_a;
    result.mu_a = params.mu_a;

    DisplacementField u(fixed_pyr.back().domain);
    int global_step = 0;

    for (int level = config.pyramid_levels - 1; level >= 0; --level) {
        const ScalarGrid& f = fixed_pyr[static_cast<std::size_t>(level)];
        const ScalarGrid& m = moving_pyr[static_cast<std::size_t>(level)];
        if (u.domain != f.domain) u = upsample_field(u, f.domain);

        // The window must fit the level; shrink to the largest odd size that does.
        int window = config.ncc_window;
        for (int a = 0; a < f.domain.dim; ++a) {
            while (window > f.domain.dims[a]) window -= 2;
        }
        if (window < 3) {
            throw std::invalid_argument("register_pair: grid too small for any ncc window");
        }
        const NccContext ctx(f, window);

        AdamState state;
        DisplacementField gradient(f.domain);
        double prev_loss = 0.0;
        for (int step = 0; step < config.steps; ++step) {
            ++global_step;
            const LossTerms terms =
                eval_step(ctx, m, u, params, config.regularizer, true, &gradient);
            if (!std::isfinite(terms.loss)) {
                throw std::runtime_error("register_pair: non-finite loss at step " +
                                         std::to_string(global_step));
            }
            adam_step(u, gradient, state, config);
            result.loss_trace.push_back(terms.loss);
            if (config.convergence_tol > 0.0 && step > 0) {
                const double rel = std::abs(terms.loss - prev_loss) /
                                   std::max(std::abs(prev_loss), 1e-12);
                if (rel < config.convergence_tol) break;
            }
            prev_loss = terms.loss;
        }
    }

    require_finite(u.vectors, "register_pair: final field");
    const NccContext final_ctx(fixed, config.ncc_window);
    result.final_terms =
        eval_step(final_ctx, moving, u, params, config.regularizer, false, nullptr);
    result.field = std::move(u);
    return result;
}

}  // namespace elastireg
