#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "elastireg/energy.hpp"
#include "elastireg/grid.hpp"
#include "elastireg/mlp.hpp"
#include "elastireg/registration.hpp"
#include "elastireg/rng.hpp"

namespace elastireg {

// Hypernetwork: maps (lambda_a, mu_a) to the full weight vector of a
// coordinate MLP that predicts the displacement at normalized voxel
// coordinates in [-1, 1]^D.
struct HyperNet {
    MlpModel net;               // 2 -> hidden -> target weight count
    LayerShapes target_shapes;  // D -> hidden -> hidden -> D
    int domain_dim = 2;
    double scale = 5.0;         // max-displacement factor, voxels
    std::uint64_t seed = 0;

    void validate() const;
};

// Hidden layers get a small uniform init; the hypernet output layer is scaled
// by `output_init_scale` (0 makes the initial predicted field exactly zero).
HyperNet make_hypernet(int domain_dim, std::uint64_t seed, int hyper_hidden = 32,
                       int target_hidden = 32, double scale = 5.0,
                       double output_init_scale = 0.0);

// Uniform sample from the triangle {lambda_a + mu_a <= 1} by rejection from
// the unit square.
ElasticityParams sample_params(Rng& rng);

// Evaluates the amortized model: hypernet -> target weights -> displacement
// at every voxel centre.
DisplacementField predict_field(const HyperNet& hyper, const ElasticityParams& params,
                                const GridDomain& domain);

// Multilinear sample of a constant image at a tape-valued voxel coordinate;
// the interpolation weights are differentiable, corner intensities are
// constants, clamped axes contribute no gradient.
TV tape_sample_image(Tape& tape, const ScalarGrid& image, std::span<const TV> coord);

// The eq. 5 training loss recorded on a tape with the hypernet weights as
// the differentiated inputs. Returns the loss node.
Tape::Id record_amortized_loss(Tape& tape, const HyperNet& hyper,
                               const std::vector<double>& hyper_weights,
                               const ElasticityParams& params, const ScalarGrid& fixed,
                               const ScalarGrid& moving, int window);

struct TrainResult {
    HyperNet model;
    std::vector<double> loss_trace;  // per-step training loss
};

// Joint unsupervised training: per step, sample (lambda_a, mu_a) and a pair,
// record the loss, backprop, and Adam-update the hypernet weights.
TrainResult train_amortized(const std::vector<std::pair<ScalarGrid, ScalarGrid>>& pairs,
                            HyperNet hyper, const OptimizerConfig& config, Rng& rng);

// Checkpoint: text header `path` plus float32 weight payload `path + ".raw"`.
void save_checkpoint(const std::string& path, const HyperNet& hyper);
HyperNet load_checkpoint(const std::string& path);

}  // namespace elastireg
