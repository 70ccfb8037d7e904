#pragma once

#include <cstdint>
#include <vector>

#include "elastireg/energy.hpp"
#include "elastireg/grid.hpp"

namespace elastireg {

enum class RegularizerKind { Elastic, Diffusion };

struct OptimizerConfig {
    double learning_rate = 1e-4;  // >= 0; 0 freezes the parameters
    int steps = 250;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Linear learning-rate decay: the last step runs at learning_rate *
    // lr_decay. 1 keeps the rate constant.
    double lr_decay = 1.0;
    int pyramid_levels = 1;
    double convergence_tol = 0.0;  // 0 disables early stopping
    int ncc_window = kDefaultNccWindow;
    // Diffusion swaps the elastic term for (lambda_a + mu_a) * diffusion_energy;
    // it exists for side-by-side comparisons against the elastic regularizer.
    RegularizerKind regularizer = RegularizerKind::Elastic;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;
};

// One Adam update of a flat parameter vector. Moments are lazily initialized
// to zero on first use. Throws on a non-finite gradient, naming the step
// index.
void adam_step_flat(std::vector<double>& params, const std::vector<double>& gradient,
                    AdamState& state, const OptimizerConfig& config);

// One Adam update of the field from the given gradient.
void adam_step(DisplacementField& field, const DisplacementField& gradient, AdamState& state,
               const OptimizerConfig& config);

struct RegistrationResult {
    DisplacementField field;
    std::vector<double> loss_trace;  // one entry per executed step
    LossTerms final_terms;           // evaluated at the returned field
    double lambda_a = 0.0;
    double mu_a = 0.0;
};

// Instance optimization of the eq. 5 objective over a dense displacement
// field, coarse-to-fine when pyramid_levels > 1.
RegistrationResult register_pair(const ScalarGrid& fixed, const ScalarGrid& moving,
                                 const ElasticityParams& params, const OptimizerConfig& config);

// Image pyramid by 2x box averaging; level 0 is the input. Coarser levels
// have dims ceil(n/2) and spacing scaled to preserve the physical extent.
std::vector<ScalarGrid> build_pyramid(const ScalarGrid& grid, int levels);

// Multilinear upsampling of a coarse-level field onto `fine`, with the
// displacement components rescaled to fine voxel units.
DisplacementField upsample_field(const DisplacementField& coarse, const GridDomain& fine);

}  // namespace elastireg
