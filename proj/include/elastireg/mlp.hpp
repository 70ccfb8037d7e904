#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "elastireg/rng.hpp"
#include "elastireg/tape.hpp"

namespace elastireg {

using LayerShapes = std::vector<std::pair<int, int>>;  // (in, out) per layer

// Flat weight count: per layer in*out weights (row-major by output unit)
// followed by out biases.
std::size_t mlp_weight_count(const LayerShapes& shapes);

// Fully connected network with tanh on hidden layers and identity output.
struct MlpModel {
    LayerShapes layer_shapes;
    std::vector<double> weights;

    static MlpModel zeros(const LayerShapes& shapes);

    void validate() const;

    // input.size() == first in, output.size() == last out.
    void forward(std::span<const double> input, std::span<double> output) const;
};

// He-style uniform init scaled by `scale`; scale 0 zeroes the layer.
void init_layer_uniform(std::vector<double>& weights, const LayerShapes& shapes,
                        std::size_t layer, double scale, Rng& rng);

// Forward pass recorded on a tape, with the weights themselves tape values
// (they may be Vars or outputs of another network).
std::vector<TV> mlp_forward_tape(Tape& tape, std::span<const TV> weights,
                                 const LayerShapes& shapes, std::span<const TV> input);

// Plain forward pass for externally supplied weights.
void mlp_forward_weights(std::span<const double> weights, const LayerShapes& shapes,
                         std::span<const double> input, std::span<double> output);

}  // namespace elastireg
