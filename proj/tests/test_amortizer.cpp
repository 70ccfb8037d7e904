#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "elastireg/amortizer.hpp"
#include "elastireg/energy.hpp"
#include "elastireg/phantom.hpp"

#include "test_support.hpp"

using namespace elastireg;
using namespace elastireg::testing;

TEST_CASE("sampled elasticity parameters are uniform on the constraint triangle") {
    Rng rng(77);
    double lambda_sum = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const ElasticityParams p = sample_params(rng);
        CHECK(p.lambda_a + p.mu_a <= 1.0);
        CHECK(p.lambda_a >= 0.0);
        CHECK(p.mu_a >= 0.0);
        lambda_sum += p.lambda_a;
    }
    const double mean = lambda_sum / n;  // triangle mean is 1/3
    CHECK(mean > 0.31);
    CHECK(mean < 0.36);

    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) {
        const ElasticityParams pa = sample_params(a);
        const ElasticityParams pb = sample_params(b);
        CHECK(pa.lambda_a == pb.lambda_a);
        CHECK(pa.mu_a == pb.mu_a);
    }
}

TEST_CASE("an all-zero hypernet predicts the zero field") {
    HyperNet h = make_hypernet(2, 5, 8, 8, 5.0);
    std::fill(h.net.weights.begin(), h.net.weights.end(), 0.0);
    const DisplacementField f =
        predict_field(h, ElasticityParams(0.3, 0.3), GridDomain::make2d(9, 9));
    for (double v : f.vectors) CHECK(v == 0.0);
}

TEST_CASE("the default init predicts the zero field but has live hidden units") {
    const HyperNet h = make_hypernet(2, 5, 8, 8, 5.0);
    const DisplacementField f =
        predict_field(h, ElasticityParams(0.2, 0.4), GridDomain::make2d(9, 9));
    for (double v : f.vectors) CHECK(v == 0.0);

    // The emitted target weights must not be all zero, or training stalls.
    std::vector<double> target(mlp_weight_count(h.target_shapes));
    const double in[2] = {0.2, 0.4};
    h.net.forward(std::span<const double>(in, 2), target);
    double sum = 0.0;
    for (double w : target) sum += std::abs(w);
    CHECK(sum > 0.1);
}

TEST_CASE("prediction is deterministic") {
    const HyperNet h = make_hypernet(2, 6, 8, 8, 5.0, 0.05);
    const GridDomain d = GridDomain::make2d(11, 10);
    const ElasticityParams p(0.25, 0.15);
    const DisplacementField a = predict_field(h, p, d);
    const DisplacementField b = predict_field(h, p, d);
    CHECK(a.vectors == b.vectors);
}

TEST_CASE("prediction responds continuously to the elasticity inputs") {
    const HyperNet h = make_hypernet(2, 6, 8, 8, 5.0, 0.2);
    const GridDomain d = GridDomain::make2d(12, 12);
    auto mean_abs_delta = [&](double delta) {
        const DisplacementField a = predict_field(h, ElasticityParams(0.3, 0.3), d);
        const DisplacementField b = predict_field(h, ElasticityParams(0.3 + delta, 0.3), d);
        double m = 0.0;
        for (std::size_t i = 0; i < a.vectors.size(); ++i) {
            m += std::abs(a.vectors[i] - b.vectors[i]);
        }
        return m / static_cast<double>(a.vectors.size());
    };
    const double big = mean_abs_delta(0.02);
    const double small = mean_abs_delta(0.01);
    const double lipschitz = big / 0.02;  // measured local slope
    CHECK(small <= lipschitz * 0.01 * 1.5);
}

TEST_CASE("mismatched hypernet output is rejected") {
    HyperNet h = make_hypernet(2, 5, 8, 8, 5.0);
    h.target_shapes = {{2, 8}, {8, 8}, {8, 8}, {8, 2}};
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
    CHECK_THROWS_AS(predict_field(h, ElasticityParams(0.1, 0.1), GridDomain::make2d(8, 8)),
                    std::invalid_argument);
}

namespace {

std::vector<std::pair<ScalarGrid, ScalarGrid>> toy_pairs(int n, int size, double amplitude) {
    std::vector<std::pair<ScalarGrid, ScalarGrid>> pairs;
    for (int i = 0; i < n; ++i) {
        PhantomSpec spec;
        spec.domain = GridDomain::make2d(size, size);
        spec.family = PhantomSpec::FieldFamily::GaussianBump;
        spec.amplitude = amplitude;
        spec.bump_sigma = 0.22 * size;
        spec.blob_count = 5;
        spec.seed = 100 + static_cast<std::uint64_t>(i);
        spec.field_seed = 999;
        const Phantom ph = make_phantom(spec);
        pairs.emplace_back(ph.fixed, ph.moving);
    }
    return pairs;
}

}  // namespace

TEST_CASE("training with lr = 0 leaves the weights bit-identical") {
    const auto pairs = toy_pairs(1, 16, 1.0);
    HyperNet h = make_hypernet(2, 5, 8, 8, 3.0, 0.1);
    const std::vector<double> before = h.net.weights;
    OptimizerConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.steps = 5;
    cfg.ncc_window = 5;
    Rng rng(4);
    const TrainResult r = train_amortized(pairs, std::move(h), cfg, rng);
    CHECK(r.model.net.weights == before);
}

TEST_CASE("training on an identical pair drives the loss down") {
    // With a perturbed start (nonzero output init) the optimum u ~ 0 is
    // nearby; the moving average must at least halve.
    PhantomSpec spec;
    spec.domain = GridDomain::make2d(16, 16);
    spec.family = PhantomSpec::FieldFamily::Affine;  // identity
    spec.blob_count = 4;
    spec.seed = 31;
    const Phantom ph = make_phantom(spec);
    std::vector<std::pair<ScalarGrid, ScalarGrid>> pairs;
    pairs.emplace_back(ph.fixed, ph.fixed);

    HyperNet h = make_hypernet(2, 6, 8, 8, 3.0, 0.1);
    OptimizerConfig cfg;
    cfg.learning_rate = 2e-3;
    cfg.steps = 200;
    cfg.ncc_window = 5;
    Rng rng(5);
    const TrainResult r = train_amortized(pairs, std::move(h), cfg, rng);
    auto window_mean = [&](std::size_t lo, std::size_t hi) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += r.loss_trace[i];
        return s / static_cast<double>(hi - lo);
    };
    const double head = window_mean(0, 50);
    const double tail = window_mean(150, 200);
    CHECK(tail < 0.5 * head);
}

TEST_CASE("taped training loss matches the analytic eq5 loss of the predicted field") {
    const auto pairs = toy_pairs(1, 16, 1.5);
    const HyperNet h = make_hypernet(2, 7, 8, 8, 3.0, 0.15);
    const ElasticityParams p(0.2, 0.3);

    Tape tape;
    const Tape::Id loss =
        record_amortized_loss(tape, h, h.net.weights, p, pairs[0].first, pairs[0].second, 5);

    const DisplacementField field = predict_field(h, p, pairs[0].first.domain);
    const double analytic =
        composite_loss_eq5(pairs[0].first, pairs[0].second, field, p, 5).value;
    CHECK(tape.value(loss) == doctest::Approx(analytic).epsilon(1e-10));
    CHECK(tape.replay(loss) == tape.value(loss));
}

TEST_CASE("hypernet weight gradients match central differences") {
    const auto pairs = toy_pairs(1, 16, 1.5);
    HyperNet h = make_hypernet(2, 8, 8, 8, 3.0, 0.2);
    const ElasticityParams p(0.3, 0.2);
    const ScalarGrid& fixed = pairs[0].first;
    const ScalarGrid& moving = pairs[0].second;

    Tape tape;
    const Tape::Id loss = record_amortized_loss(tape, h, h.net.weights, p, fixed, moving, 5);
    const std::vector<double> grad = backprop(tape, loss);

    const double hstep = 1e-5;
    const std::size_t probes[3] = {3, h.net.weights.size() / 2, h.net.weights.size() - 2};
    for (std::size_t idx : probes) {
        std::vector<double> w = h.net.weights;
        w[idx] += hstep;
        Tape tp;
        const double plus = tp.value(record_amortized_loss(tp, h, w, p, fixed, moving, 5));
        w[idx] -= 2.0 * hstep;
        Tape tm;
        const double minus = tm.value(record_amortized_loss(tm, h, w, p, fixed, moving, 5));
        const double fd = (plus - minus) / (2.0 * hstep);
        if (std::abs(grad[idx]) > 1e-10 || std::abs(fd) > 1e-10) {
            CHECK(rel_diff(grad[idx], fd) < 1e-3);
        }
    }
}

TEST_CASE("training diverges loudly on an absurd learning rate") {
    const auto pairs = toy_pairs(1, 16, 1.5);
    HyperNet h = make_hypernet(2, 5, 8, 8, 3.0, 0.1);
    OptimizerConfig cfg;
    cfg.learning_rate = 1e200;  // blows the elastic term past the double range
    cfg.steps = 30;
    cfg.ncc_window = 5;
    Rng rng(6);
    CHECK_THROWS_WITH_AS(train_amortized(pairs, std::move(h), cfg, rng),
                         doctest::Contains("step"), std::runtime_error);
}

TEST_CASE("predicted deformation magnitude shrinks as the weights grow") {
    // Short training on a small corpus; the trend check allows 10% slack.
    const auto pairs = toy_pairs(2, 16, 2.0);
    HyperNet h = make_hypernet(2, 9, 8, 8, 3.0);
    OptimizerConfig cfg;
    cfg.learning_rate = 4e-3;
    cfg.lr_decay = 0.1;
    cfg.steps = 400;
    cfg.ncc_window = 5;
    Rng rng(7);
    const TrainResult r = train_amortized(pairs, std::move(h), cfg, rng);

    double prev = -1.0;
    for (double c : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        const DisplacementField f =
            predict_field(r.model, ElasticityParams(c / 2, c / 2), pairs[0].first.domain);
        double mean = 0.0;
        for (double v : f.vectors) mean += std::abs(v);
        mean /= static_cast<double>(f.vectors.size());
        if (prev >= 0.0) CHECK(mean <= prev * 1.10);
        prev = mean;
    }
}

TEST_CASE("checkpoints round-trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "elastireg_ckpt_test";
    fs::create_directories(dir);
    const std::string path_a = (dir / "a.hmod").string();
    const std::string path_b = (dir / "b.hmod").string();

    const HyperNet h = make_hypernet(2, 12, 8, 8, 4.0, 0.3);
    save_checkpoint(path_a, h);
    const HyperNet loaded = load_checkpoint(path_a);
    CHECK(loaded.domain_dim == h.domain_dim);
    CHECK(loaded.target_shapes == h.target_shapes);
    CHECK(loaded.scale == h.scale);

    // float32 payload: a second save of the loaded model is byte-identical.
    save_checkpoint(path_b, loaded);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(path_a + ".raw") == slurp(path_b + ".raw"));

    const GridDomain d = GridDomain::make2d(10, 10);
    const ElasticityParams p(0.2, 0.2);
    const DisplacementField fa = predict_field(loaded, p, d);
    const DisplacementField fb = predict_field(load_checkpoint(path_b), p, d);
    CHECK(fa.vectors == fb.vectors);

    SUBCASE("corrupt payloads are rejected with byte counts") {
        fs::resize_file(path_a + ".raw", fs::file_size(path_a + ".raw") - 1);
        CHECK_THROWS_WITH_AS(load_checkpoint(path_a), doctest::Contains("expected"),
                             std::runtime_error);
    }
}
