#include "elastireg/amortizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace elastireg {

void HyperNet::validate() const {
    net.validate();
    if (domain_dim != 2 && domain_dim != 3) {
        throw std::invalid_argument("HyperNet: domain_dim must be 2 or 3");
    }
    if (net.layer_shapes.front().first != 2) {
        throw std::invalid_argument("HyperNet: hypernet input size must be 2 (lambda_a, mu_a)");
    }
    const std::size_t target_count = mlp_weight_count(target_shapes);
    if (static_cast<std::size_t>(net.layer_shapes.back().second) != target_count) {
        throw std::invalid_argument("HyperNet: hypernet output size " +
                                    std::to_string(net.layer_shapes.back().second) +
                                    " != target weight count " + std::to_string(target_count));
    }
    if (target_shapes.front().first != domain_dim ||
        target_shapes.back().second != domain_dim) {
        throw std::invalid_argument("HyperNet: target network must map D -> D coordinates");
    }
    if (!(scale > 0.0)) throw std::invalid_argument("HyperNet: scale must be positive");
}

HyperNet make_hypernet(int domain_dim, std::uint64_t seed, int hyper_hidden, int target_hidden,
                       double scale, double output_init_scale) {
    HyperNet h;
    h.domain_dim = domain_dim;
    h.scale = scale;
    h.seed = seed;
    h.target_shapes = {{domain_dim, target_hidden},
                       {target_hidden, target_hidden},
                       {target_hidden, domain_dim}};
    const int target_count = static_cast<int>(mlp_weight_count(h.target_shapes));
    h.net.layer_shapes = {{2, hyper_hidden}, {hyper_hidden, target_count}};
    h.net.weights.assign(mlp_weight_count(h.net.layer_shapes), 0.0);
    Rng rng(seed);
    init_layer_uniform(h.net.weights, h.net.layer_shapes, 0, 1.0, rng);
    init_layer_uniform(h.net.weights, h.net.layer_shapes, 1, output_init_scale, rng);

    // The bias block of the hypernet output layer is the target weight vector
    // emitted at init. Give the target's hidden layers a standard random init
    // there while keeping its output layer zero: the initial predicted field
    // is exactly zero, yet hidden activations are alive so gradients reach
    // every layer (a target network of all-zero weights would train its
    // output biases only).
    std::vector<double> target_init(static_cast<std::size_t>(target_count), 0.0);
    const std::size_t hidden_layers = h.target_shapes.size() - 1;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        init_layer_uniform(target_init, h.target_shapes, l, 1.0, rng);
    }
    const std::size_t bias_at = mlp_weight_count(h.net.layer_shapes) -
                                static_cast<std::size_t>(target_count);
    for (int i = 0; i < target_count; ++i) {
        h.net.weights[bias_at + static_cast<std::size_t>(i)] +=
            target_init[static_cast<std::size_t>(i)];
    }

    h.validate();
    return h;
}

ElasticityParams sample_params(Rng& rng) {
    for (;;) {
        const double lambda = rng.uniform();
        const double mu = rng.uniform();
        if (lambda + mu <= 1.0) return ElasticityParams(lambda, mu);
    }
}

namespace {

// Normalized coordinate of voxel index i along an axis of size n.
double norm_coord(int i, int n) {
    return n > 1 ? 2.0 * static_cast<double>(i) / (n - 1) - 1.0 : 0.0;
}

}  // namespace

DisplacementField predict_field(const HyperNet& hyper, const ElasticityParams& params,
                                const GridDomain& domain) {
    hyper.validate();
    if (domain.dim != hyper.domain_dim) {
        throw std::invalid_argument("predict_field: domain dim does not match the model");
    }
    std::vector<double> target_weights(mlp_weight_count(hyper.target_shapes));
    const double in[2] = {params.lambda_a, params.mu_a};
    hyper.net.forward(std::span<const double>(in, 2), target_weights);

    DisplacementField field(domain);
    const std::size_t n = domain.voxel_count();
    const int nx = domain.dims[0], ny = domain.dims[1];
    std::vector<double> coord(static_cast<std::size_t>(domain.dim));
    std::vector<double> out(static_cast<std::size_t>(domain.dim));
    for (std::size_t idx = 0; idx < n; ++idx) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(nx));
        const int y = static_cast<int>((idx / static_cast<std::size_t>(nx)) %
                                       static_cast<std::size_t>(ny));
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) *
                                              static_cast<std::size_t>(ny)));
        coord[0] = norm_coord(x, domain.dims[0]);
        coord[1] = norm_coord(y, domain.dims[1]);
        if (domain.dim == 3) coord[2] = norm_coord(z, domain.dims[2]);
        mlp_forward_weights(target_weights, hyper.target_shapes, coord, out);
        for (int c = 0; c < domain.dim; ++c) {
            field.comp(c, idx) = hyper.scale * out[static_cast<std::size_t>(c)];
        }
    }
    return field;
}

namespace {

struct AxisPick {
    int i0 = 0, i1 = 0;
    bool clamped = false;
};

AxisPick pick_axis(double c, int n) {
    AxisPick p;
    if (n == 1 || c <= 0.0) {
        p.clamped = true;
        return p;
    }
    if (c >= static_cast<double>(n - 1)) {
        p.i0 = p.i1 = n - 1;
        p.clamped = true;
        return p;
    }
    p.i0 = static_cast<int>(std::floor(c));
    p.i1 = p.i0 + 1;
    return p;
}

// frac as a tape value; a clamped axis contributes a constant 0 so no
// gradient flows through it (same convention as sample_linear_grad).
TV axis_frac(Tape& tape, TV coord, const AxisPick& p) {
    if (p.clamped) return TV(tape, tape.constant(0.0));
    return coord - static_cast<double>(p.i0);
}

TV lerp(TV f, double a, double b) {
    Tape& t = *f.tape;
    // a + f*(b - a)
    return fma(f, TV(t, t.constant(b - a)), TV(t, t.constant(a)));
}

TV lerp_tv(TV f, TV a, TV b) { return fma(f, b - a, a); }

}  // namespace

TV tape_sample_image(Tape& tape, const ScalarGrid& img, std::span<const TV> coord) {
    const GridDomain& d = img.domain;
    const AxisPick px = pick_axis(coord[0].value(), d.dims[0]);
    const AxisPick py = pick_axis(coord[1].value(), d.dims[1]);
    const TV fx = axis_frac(tape, coord[0], px);
    const TV fy = axis_frac(tape, coord[1], py);
    if (d.dim == 2) {
        const TV a = lerp(fx, img.at(px.i0, py.i0), img.at(px.i1, py.i0));
        const TV b = lerp(fx, img.at(px.i0, py.i1), img.at(px.i1, py.i1));
        return lerp_tv(fy, a, b);
    }
    const AxisPick pz = pick_axis(coord[2].value(), d.dims[2]);
    const TV fz = axis_frac(tape, coord[2], pz);
    const TV a0 = lerp(fx, img.at(px.i0, py.i0, pz.i0), img.at(px.i1, py.i0, pz.i0));
    const TV a1 = lerp(fx, img.at(px.i0, py.i1, pz.i0), img.at(px.i1, py.i1, pz.i0));
    const TV b0 = lerp_tv(fy, a0, a1);
    const TV a2 = lerp(fx, img.at(px.i0, py.i0, pz.i1), img.at(px.i1, py.i0, pz.i1));
    const TV a3 = lerp(fx, img.at(px.i0, py.i1, pz.i1), img.at(px.i1, py.i1, pz.i1));
    const TV b1 = lerp_tv(fy, a2, a3);
    return lerp_tv(fz, b0, b1);
}

namespace {

// Windowed sums along one axis via taped prefix sums.
void tape_box_pass(Tape& tape, const GridDomain& d, int axis, int radius, std::vector<TV>& buf) {
    const int n = d.dims[axis];
    const std::size_t stride = axis == 0 ? 1
                             : axis == 1 ? static_cast<std::size_t>(d.dims[0])
                                         : static_cast<std::size_t>(d.dims[0]) * d.dims[1];
    const std::size_t lines = d.voxel_count() / static_cast<std::size_t>(n);
    std::vector<TV> prefix(static_cast<std::size_t>(n) + 1);
    std::vector<TV> out_line(static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < lines; ++k) {
        std::size_t base;
        const std::size_t nx = d.dims[0], ny = d.dims[1];
        switch (axis) {
            case 0: base = k * nx; break;
            case 1: base = (k % nx) + (k / nx) * nx * ny; break;
            default: base = k; break;
        }
        prefix[0] = TV(tape, tape.constant(0.0));
        for (int i = 0; i < n; ++i) {
            prefix[static_cast<std::size_t>(i) + 1] =
                prefix[static_cast<std::size_t>(i)] + buf[base + static_cast<std::size_t>(i) * stride];
        }
        for (int i = 0; i < n; ++i) {
            const int lo = std::max(0, i - radius);
            const int hi = std::min(n - 1, i + radius);
            out_line[static_cast<std::size_t>(i)] =
                prefix[static_cast<std::size_t>(hi) + 1] - prefix[static_cast<std::size_t>(lo)];
        }
        for (int i = 0; i < n; ++i) {
            buf[base + static_cast<std::size_t>(i) * stride] = out_line[static_cast<std::size_t>(i)];
        }
    }
}

void tape_box_sum(Tape& tape, const GridDomain& d, int radius, std::vector<TV>& buf) {
    for (int axis = 0; axis < d.dim; ++axis) tape_box_pass(tape, d, axis, radius, buf);
}

}  // namespace

Tape::Id record_amortized_loss(Tape& tape, const HyperNet& hyper,
                               const std::vector<double>& hyper_weights,
                               const ElasticityParams& params, const ScalarGrid& fixed,
                               const ScalarGrid& moving, int window) {
    require_same_domain(fixed.domain, moving.domain, "amortized loss");
    const GridDomain& d = fixed.domain;
    if (d.dim != hyper.domain_dim) {
        throw std::invalid_argument("amortized loss: pair dim does not match the model");
    }
    if (hyper_weights.size() != mlp_weight_count(hyper.net.layer_shapes)) {
        throw std::invalid_argument("amortized loss: hypernet weight count mismatch");
    }

    // Hypernet weights are the differentiated inputs.
    std::vector<TV> w;
    w.reserve(hyper_weights.size());
    for (double v : hyper_weights) w.emplace_back(tape, tape.var(v));

    const std::array<TV, 2> param_in = {TV(tape, tape.constant(params.lambda_a)),
                                        TV(tape, tape.constant(params.mu_a))};
    const std::vector<TV> target_w =
        mlp_forward_tape(tape, w, hyper.net.layer_shapes, std::span<const TV>(param_in));

    // Predict the displacement at every voxel and warp the moving image.
    const std::size_t n = d.voxel_count();
    const int nx = d.dims[0], ny = d.dims[1];
    std::vector<std::vector<TV>> u(static_cast<std::size_t>(d.dim));
    for (auto& comp : u) comp.resize(n);
    std::vector<TV> warped(n);
    std::vector<TV> coord_in(static_cast<std::size_t>(d.dim));
    std::vector<TV> sample_coord(static_cast<std::size_t>(d.dim));
    for (std::size_t idx = 0; idx < n; ++idx) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(nx));
        const int y = static_cast<int>((idx / static_cast<std::size_t>(nx)) %
                                       static_cast<std::size_t>(ny));
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) *
                                              static_cast<std::size_t>(ny)));
        const int pos[3] = {x, y, z};
        for (int c = 0; c < d.dim; ++c) {
            coord_in[static_cast<std::size_t>(c)] =
                TV(tape, tape.constant(norm_coord(pos[c], d.dims[c])));
        }
        std::vector<TV> out = mlp_forward_tape(tape, target_w, hyper.target_shapes, coord_in);
        for (int c = 0; c < d.dim; ++c) {
            u[static_cast<std::size_t>(c)][idx] = out[static_cast<std::size_t>(c)] * hyper.scale;
            sample_coord[static_cast<std::size_t>(c)] =
                u[static_cast<std::size_t>(c)][idx] + static_cast<double>(pos[c]);
        }
        warped[idx] = tape_sample_image(tape, moving, sample_coord);
    }

    // NCC: the fixed-image window statistics are constants, only the moving
    // side is taped.
    const NccContext ctx(fixed, window);
    const int radius = window / 2;
    std::vector<TV> sum_w = warped;
    tape_box_sum(tape, d, radius, sum_w);
    std::vector<TV> sum_ww(n), sum_fw(n);
    for (std::size_t i = 0; i < n; ++i) {
        sum_ww[i] = warped[i] * warped[i];
        sum_fw[i] = warped[i] * fixed.values[i];
    }
    tape_box_sum(tape, d, radius, sum_ww);
    tape_box_sum(tape, d, radius, sum_fw);

    TV cc_total(tape, tape.constant(0.0));
    const std::vector<double>& counts = ctx.window_counts();
    const std::vector<double>& sum_f = ctx.fixed_window_sums();
    const std::vector<double>& var_f = ctx.fixed_window_vars();
    for (std::size_t i = 0; i < n; ++i) {
        if (var_f[i] <= kNccVarianceEps) continue;
        const double inv_cnt = 1.0 / counts[i];
        const TV cross = fma(sum_w[i], TV(tape, tape.constant(-sum_f[i] * inv_cnt)), sum_fw[i]);
        const TV var_w = fma(sum_w[i] * (-inv_cnt), sum_w[i], sum_ww[i]);
        if (var_w.value() <= kNccVarianceEps) continue;
        cc_total = cc_total + cross * cross / (var_w * var_f[i]);
    }
    const TV ncc = cc_total * (1.0 / static_cast<double>(n));

    // Elastic term, forward differences with the last-slice-zero rule.
    const std::size_t strides[3] = {1, static_cast<std::size_t>(nx),
                                    static_cast<std::size_t>(nx) * ny};
    TV elastic_total(tape, tape.constant(0.0));
    const double lam = params.lambda_a, mu = params.mu_a;
    std::vector<TV> diff(static_cast<std::size_t>(d.dim) * d.dim);
    for (std::size_t idx = 0; idx < n; ++idx) {
        const int pos[3] = {
            static_cast<int>(idx % static_cast<std::size_t>(nx)),
            static_cast<int>((idx / static_cast<std::size_t>(nx)) % static_cast<std::size_t>(ny)),
            static_cast<int>(idx / (static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)))};
        bool any = false;
        for (int axis = 0; axis < d.dim; ++axis) {
            const bool live = pos[axis] + 1 < d.dims[axis];
            const double inv_h = 1.0 / d.spacing[axis];
            for (int c = 0; c < d.dim; ++c) {
                TV& slot = diff[static_cast<std::size_t>(axis) * d.dim + c];
                if (live) {
                    slot = (u[static_cast<std::size_t>(c)][idx + strides[axis]] -
                            u[static_cast<std::size_t>(c)][idx]) *
                           inv_h;
                    any = true;
                } else {
                    slot = TV(tape, tape.constant(0.0));
                }
            }
        }
        if (!any) continue;
        TV shear(tape, tape.constant(0.0));
        TV div(tape, tape.constant(0.0));
        for (int i = 0; i < d.dim; ++i) {
            div = div + diff[static_cast<std::size_t>(i) * d.dim + i];
            for (int j = 0; j < d.dim; ++j) {
                const TV s = diff[static_cast<std::size_t>(i) * d.dim + j] +
                             diff[static_cast<std::size_t>(j) * d.dim + i];
                shear = fma(s, s, shear);
            }
        }
        elastic_total = elastic_total + (0.25 * mu) * shear + (0.5 * lam) * (div * div);
    }
    const TV elastic = elastic_total * (1.0 / static_cast<double>(n));

    const TV loss = params.similarity_weight() * (1.0 - ncc) + elastic;
    return loss.id;
}

TrainResult train_amortized(const std::vector<std::pair<ScalarGrid, ScalarGrid>>& pairs,
                            HyperNet hyper, const OptimizerConfig& config, Rng& rng) {
    config.validate();
    hyper.validate();
    if (pairs.empty()) throw std::invalid_argument("train_amortized: no training pairs");
    for (const auto& [f, m] : pairs) {
        require_same_domain(f.domain, m.domain, "train_amortized");
        require_same_domain(f.domain, pairs.front().first.domain, "train_amortized");
    }

    TrainResult result;
    result.loss_trace.reserve(static_cast<std::size_t>(config.steps));

    AdamState state;
    Tape tape;
    std::vector<double> grad(hyper.net.weights.size());
    const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
    for (int step = 0; step < config.steps; ++step) {
        const ElasticityParams params = sample_params(rng);

        // One update per step on the mean loss over the whole corpus.
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss_value = 0.0;
        for (const auto& [fixed, moving] : pairs) {
            tape.clear();
            const Tape::Id loss = record_amortized_loss(tape, hyper, hyper.net.weights, params,
                                                        fixed, moving, config.ncc_window);
            loss_value += tape.value(loss) * inv_pairs;
            const std::vector<double> pair_grad = backprop(tape, loss);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += pair_grad[i] * inv_pairs;
        }
        if (!std::isfinite(loss_value)) {
            throw std::runtime_error("train_amortized: non-finite loss at step " +
                                     std::to_string(step + 1));
        }

        OptimizerConfig step_config = config;
        if (config.lr_decay != 1.0 && config.steps > 1) {
            const double f = static_cast<double>(step) / (config.steps - 1);
            step_config.learning_rate =
                config.learning_rate * (1.0 - f + f * config.lr_decay);
        }
        adam_step_flat(hyper.net.weights, grad, state, step_config);
        result.loss_trace.push_back(loss_value);
    }

    require_finite(hyper.net.weights, "train_amortized: weights");
    result.model = std::move(hyper);
    return result;
}

namespace {

std::string shapes_to_string(const LayerShapes& shapes) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (i) os << ",";
        os << shapes[i].first << "x" << shapes[i].second;
    }
    return os.str();
}

LayerShapes shapes_from_string(const std::string& text) {
    LayerShapes shapes;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        const auto xpos = item.find('x');
        if (xpos == std::string::npos) {
            throw std::runtime_error("checkpoint: bad layer shape '" + item + "'");
        }
        shapes.emplace_back(std::stoi(item.substr(0, xpos)), std::stoi(item.substr(xpos + 1)));
    }
    if (shapes.empty()) throw std::runtime_error("checkpoint: empty layer shapes");
    return shapes;
}

}  // namespace

void save_checkpoint(const std::string& path, const HyperNet& hyper) {
    hyper.validate();
    const std::string raw_path = path + ".raw";

    std::ofstream header(path);
    if (!header) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    header << "HMOD1\n";
    header << "domain_dim=" << hyper.domain_dim << "\n";
    header << "hyper_shapes=" << shapes_to_string(hyper.net.layer_shapes) << "\n";
    header << "target_shapes=" << shapes_to_string(hyper.target_shapes) << "\n";
    header << "activation=tanh-hidden,identity-output\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", hyper.scale);
    header << "scale=" << buf << "\n";
    header << "seed=" << hyper.seed << "\n";
    header << "weight_count=" << hyper.net.weights.size() << "\n";
    header << "endian=little\n";
    if (!header) throw std::runtime_error("checkpoint: write failed for " + path);
    header.close();

    std::ofstream raw(raw_path, std::ios::binary);
    if (!raw) throw std::runtime_error("checkpoint: cannot open " + raw_path + " for writing");
    std::vector<float> payload(hyper.net.weights.begin(), hyper.net.weights.end());
    raw.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!raw) throw std::runtime_error("checkpoint: write failed for " + raw_path);
}

HyperNet load_checkpoint(const std::string& path) {
    std::ifstream header(path);
    if (!header) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(header, line) || line != "HMOD1") {
        throw std::runtime_error("checkpoint: missing HMOD1 magic in " + path);
    }

    HyperNet h;
    std::size_t weight_count = 0;
    while (std::getline(header, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("checkpoint: malformed header line '" + line + "'");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "domain_dim") h.domain_dim = std::stoi(value);
        else if (key == "hyper_shapes") h.net.layer_shapes = shapes_from_string(value);
        else if (key == "target_shapes") h.target_shapes = shapes_from_string(value);
        else if (key == "scale") h.scale = std::stod(value);
        else if (key == "seed") h.seed = std::stoull(value);
        else if (key == "weight_count") weight_count = std::stoull(value);
        else if (key == "endian") {
            if (value != "little") {
                throw std::runtime_error("checkpoint: unsupported endianness '" + value + "'");
            }
        } else if (key != "activation") {
            throw std::runtime_error("checkpoint: unknown header key '" + key + "'");
        }
    }

    const std::string raw_path = path + ".raw";
    std::ifstream raw(raw_path, std::ios::binary | std::ios::ate);
    if (!raw) throw std::runtime_error("checkpoint: cannot open " + raw_path);
    const std::streamsize bytes = raw.tellg();
    const std::streamsize expected =
        static_cast<std::streamsize>(weight_count * sizeof(float));
    if (bytes != expected) {
        throw std::runtime_error("checkpoint: payload " + raw_path + " holds " +
                                 std::to_string(bytes) + " bytes, expected " +
                                 std::to_string(expected));
    }
    raw.seekg(0);
    std::vector<float> payload(weight_count);
    raw.read(reinterpret_cast<char*>(payload.data()), expected);
    if (!raw) throw std::runtime_error("checkpoint: short read from " + raw_path);

    h.net.weights.assign(payload.begin(), payload.end());
    h.validate();
    return h;
}

}  // namespace elastireg
