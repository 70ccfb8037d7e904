#include "elastireg/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace elastireg {

std::size_t mlp_weight_count(const LayerShapes& shapes) {
    std::size_t n = 0;
    for (const auto& [in, out] : shapes) {
        n += static_cast<std::size_t>(in) * out + static_cast<std::size_t>(out);
    }
    return n;
}

MlpModel MlpModel::zeros(const LayerShapes& shapes) {
    MlpModel m;
    m.layer_shapes = shapes;
    m.weights.assign(mlp_weight_count(shapes), 0.0);
    return m;
}

void MlpModel::validate() const {
    if (layer_shapes.empty()) throw std::invalid_argument("MlpModel: no layers");
    for (std::size_t l = 1; l < layer_shapes.size(); ++l) {
        if (layer_shapes[l].first != layer_shapes[l - 1].second) {
            throw std::invalid_argument("MlpModel: layer " + std::to_string(l) +
                                        " input does not match previous output");
        }
    }
    if (weights.size() != mlp_weight_count(layer_shapes)) {
        throw std::invalid_argument("MlpModel: weight vector length " +
                                    std::to_string(weights.size()) + " != expected " +
                                    std::to_string(mlp_weight_count(layer_shapes)));
    }
    for (double w : weights) {
        if (!std::isfinite(w)) throw std::invalid_argument("MlpModel: non-finite weight");
    }
}

void MlpModel::forward(std::span<const double> input, std::span<double> output) const {
    mlp_forward_weights(weights, layer_shapes, input, output);
}

void init_layer_uniform(std::vector<double>& weights, const LayerShapes& shapes,
                        std::size_t layer, double scale, Rng& rng) {
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layer; ++l) {
        offset += static_cast<std::size_t>(shapes[l].first) * shapes[l].second +
                  static_cast<std::size_t>(shapes[l].second);
    }
    const auto [in, out] = shapes[layer];
    const double bound = scale / std::sqrt(static_cast<double>(in));
    for (int o = 0; o < out; ++o) {
        for (int i = 0; i < in; ++i) {
            weights[offset + static_cast<std::size_t>(o) * in + i] =
                scale == 0.0 ? 0.0 : rng.uniform(-bound, bound);
        }
    }
    const std::size_t bias_at = offset + static_cast<std::size_t>(in) * out;
    for (int o = 0; o < out; ++o) weights[bias_at + static_cast<std::size_t>(o)] = 0.0;
}

void mlp_forward_weights(std::span<const double> weights, const LayerShapes& shapes,
                         std::span<const double> input, std::span<double> output) {
    std::vector<double> cur(input.begin(), input.end());
    std::vector<double> next;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        const auto [in, out] = shapes[l];
        if (cur.size() != static_cast<std::size_t>(in)) {
            throw std::invalid_argument("mlp forward: input size mismatch at layer " +
                                        std::to_string(l));
        }
        next.assign(static_cast<std::size_t>(out), 0.0);
        const std::size_t bias_at = offset + static_cast<std::size_t>(in) * out;
        const bool hidden = l + 1 < shapes.size();
        for (int o = 0; o < out; ++o) {
            double acc = weights[bias_at + static_cast<std::size_t>(o)];
            const std::size_t row = offset + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += weights[row + i] * cur[static_cast<std::size_t>(i)];
            next[static_cast<std::size_t>(o)] = hidden ? std::tanh(acc) : acc;
        }
        cur.swap(next);
        offset = bias_at + static_cast<std::size_t>(out);
    }
    if (output.size() != cur.size()) {
        throw std::invalid_argument("mlp forward: output span size mismatch");
    }
    for (std::size_t i = 0; i < cur.size(); ++i) output[i] = cur[i];
}

std::vector<TV> mlp_forward_tape(Tape& tape, std::span<const TV> weights,
                                 const LayerShapes& shapes, std::span<const TV> input) {
    (void)tape;  // the TV handles carry the tape; kept for call-site clarity
    if (weights.size() != mlp_weight_count(shapes)) {
        throw std::invalid_argument("mlp forward (tape): weight count mismatch");
    }
    std::vector<TV> cur(input.begin(), input.end());
    std::vector<TV> next;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        const auto [in, out] = shapes[l];
        next.clear();
        next.reserve(static_cast<std::size_t>(out));
        const std::size_t bias_at = offset + static_cast<std::size_t>(in) * out;
        const bool hidden = l + 1 < shapes.size();
        for (int o = 0; o < out; ++o) {
            TV acc = weights[bias_at + static_cast<std::size_t>(o)];
            const std::size_t row = offset + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) {
                acc = fma(weights[row + static_cast<std::size_t>(i)],
                          cur[static_cast<std::size_t>(i)], acc);
            }
            next.push_back(hidden ? tanh(acc) : acc);
        }
        cur.swap(next);
        offset = bias_at + static_cast<std::size_t>(out);
    }
    return cur;
}

}  // namespace elastireg
