#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "elastireg/grid.hpp"

namespace elastireg {

struct EnergyValue {
    double value = 0.0;
    std::optional<DisplacementField> gradient;  // d value / d u, when requested
};

// Unconstrained Lame parameters (lambda, mu) as reported in the literature.
struct RawElasticity {
    double lambda = 0.0;
    double mu = 0.0;

    RawElasticity() = default;
    RawElasticity(double lambda_, double mu_);

    // lambda/mu; only meaningful when mu > 0.
    std::optional<double> ratio() const;
};

// Weight-absorbed elasticity parameters (lambda_a, mu_a) constrained to the
// simplex 0 <= lambda_a + mu_a <= 1 (checked within 1e-9 to admit values
// assembled from grid lattice arithmetic).
struct ElasticityParams {
    double lambda_a = 0.0;
    double mu_a = 0.0;

    ElasticityParams() = default;
    ElasticityParams(double lambda_a_, double mu_a_);

    // Coefficient of the dissimilarity term, clamped at 0 against rounding.
    double similarity_weight() const;
};

constexpr int kDefaultNccWindow = 9;
constexpr double kNccVarianceEps = 1e-5;

struct NccResult {
    double value = 0.0;                     // mean squared local correlation, in [0, 1]
    std::optional<ScalarGrid> d_moving;     // d value / d moving intensities
};

// Precomputed fixed-image window statistics; reusable across evaluations of
// different moving images on the same fixed image (e.g. optimization steps).
class NccContext {
  public:
    NccContext(const ScalarGrid& fixed, int window);

    const GridDomain& domain() const { return fixed_.domain; }
    int window() const { return window_; }

    NccResult evaluate(const ScalarGrid& moving, bool with_gradient) const;

    // Per-voxel fixed-image window statistics (used by the taped loss).
    const std::vector<double>& window_counts() const { return count_; }
    const std::vector<double>& fixed_window_sums() const { return sum_f_; }
    const std::vector<double>& fixed_window_vars() const { return var_f_; }

  private:
    ScalarGrid fixed_;
    int window_ = kDefaultNccWindow;
    int radius_ = 4;
    std::vector<double> count_;   // window size per voxel (truncated at borders)
    std::vector<double> sum_f_;   // box sum of F
    std::vector<double> var_f_;   // sum of squared deviations of F per window
};

// Local squared normalized cross-correlation over window^D neighbourhoods
// (truncated at the image border), averaged over all voxels. Windows whose
// variance does not exceed kNccVarianceEps count as 0.
NccResult ncc_local(const ScalarGrid& fixed, const ScalarGrid& moving_warped,
                    int window = kDefaultNccWindow, bool with_gradient = false);

// Mean over voxels of sum_ij (d u_j / d x_i)^2, forward differences.
EnergyValue diffusion_energy(const DisplacementField& field, bool with_gradient = false);

// Mean over voxels of mu/4 sum_ij (d_i u_j + d_j u_i)^2 + lambda/2 (div u)^2.
EnergyValue elastic_energy(const DisplacementField& field, const RawElasticity& params,
                           bool with_gradient = false);

// Per-voxel integrand grids (used to inspect interior densities).
ScalarGrid diffusion_energy_density(const DisplacementField& field);
ScalarGrid elastic_energy_density(const DisplacementField& field, const RawElasticity& params);

struct LossTerms {
    double loss = 0.0;
    double ncc = 0.0;             // similarity value in [0, 1]
    double dissimilarity = 0.0;   // 1 - ncc
    double regularizer = 0.0;     // weighted elastic (or diffusion) term
    double similarity_weight = 0.0;
};

// Low-level form shared by the eq. 4/5 losses and the optimizer loop:
// sim_weight * (1 - NCC) + elastic(u; reg), reusing a prebuilt NccContext.
EnergyValue composite_loss_with_context(const NccContext& ctx, const ScalarGrid& moving,
                                        const DisplacementField& field, double sim_weight,
                                        const RawElasticity& reg, bool with_gradient = false,
                                        LossTerms* terms = nullptr);

// (1-alpha) * (1 - NCC(F, M o phi)) + alpha * elastic(u; lambda, mu).
EnergyValue composite_loss_eq4(const ScalarGrid& fixed, const ScalarGrid& moving,
                               const DisplacementField& field, double alpha,
                               const RawElasticity& params, int window = kDefaultNccWindow,
                               bool with_gradient = false, LossTerms* terms = nullptr);

// (1-lambda_a-mu_a) * (1 - NCC(F, M o phi)) + elastic(u; lambda_a, mu_a).
EnergyValue composite_loss_eq5(const ScalarGrid& fixed, const ScalarGrid& moving,
                               const DisplacementField& field, const ElasticityParams& params,
                               int window = kDefaultNccWindow, bool with_gradient = false,
                               LossTerms* terms = nullptr);

using EnergyFn = std::function<EnergyValue(const DisplacementField&, bool with_gradient)>;

// Central-difference check of an analytic gradient on a random sample of
// (voxel, component) slots. Returns max |analytic - fd| / (|analytic| + 1e-12).
double grad_check(const EnergyFn& energy, const DisplacementField& field, double h,
                  int sample_count = 32, std::uint64_t seed = 1234);

}  // namespace elastireg
