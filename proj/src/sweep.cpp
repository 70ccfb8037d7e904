#include "elastireg/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include "elastireg/io.hpp"

namespace elastireg {

ParamGrid enumerate_grid(double resolution) {
    if (!(resolution > 0.0 && resolution <= 1.0)) {
        throw std::invalid_argument("enumerate_grid: resolution must lie in (0, 1]");
    }
    const double inv = 1.0 / resolution;
    const long long n = std::llround(inv);
    if (n < 1 || std::abs(inv - static_cast<double>(n)) > 1e-9) {
        throw std::invalid_argument("enumerate_grid: 1/resolution must be integral, got " +
                                    std::to_string(resolution));
    }
    ParamGrid grid;
    grid.resolution = resolution;
    for (long long i = 0; i <= n; ++i) {
        for (long long j = 0; j + i <= n; ++j) {
            grid.combos.emplace_back(static_cast<double>(i) / static_cast<double>(n),
                                     static_cast<double>(j) / static_cast<double>(n));
        }
    }
    return grid;
}

double Heuristic::score(const ComboRecord& record) const {
    auto need_dice = [&]() {
        if (!record.dice_mean) {
            throw std::runtime_error("heuristic '" + name + "': sweep has no dice data "
                                     "(label volumes were not provided)");
        }
        return *record.dice_mean;
    };
    auto need_tre = [&]() {
        if (!record.tre_mean_mm) {
            throw std::runtime_error("heuristic '" + name + "': sweep has no tre data "
                                     "(keypoints were not provided)");
        }
        return *record.tre_mean_mm;
    };
    switch (kind) {
        case Kind::MaxDice: return need_dice();
        case Kind::MinTre: return -need_tre();
        case Kind::Weighted: {
            double s = 0.0;
            if (w_dice != 0.0) s += w_dice * need_dice();
            if (w_tre != 0.0) s -= w_tre * need_tre();
            if (w_neg != 0.0) s -= w_neg * record.neg_jac_fraction;
            return s;
        }
    }
    throw std::logic_error("heuristic: unknown kind");
}

Heuristic Heuristic::parse(const std::string& text) {
    Heuristic h;
    h.name = text;
    if (text == "dice") {
        h.kind = Kind::MaxDice;
        return h;
    }
    if (text == "tre") {
        h.kind = Kind::MinTre;
        return h;
    }
    if (text.rfind("weighted:", 0) == 0) {
        h.kind = Kind::Weighted;
        const std::string spec = text.substr(9);
        std::istringstream is(spec);
        std::string item;
        std::vector<double> w;
        while (std::getline(is, item, ',')) w.push_back(std::stod(item));
        if (w.size() != 3) {
            throw std::invalid_argument("heuristic: expected weighted:<w_dice>,<w_tre>,<w_neg>");
        }
        h.w_dice = w[0];
        h.w_tre = w[1];
        h.w_neg = w[2];
        if (!std::isfinite(h.w_dice) || !std::isfinite(h.w_tre) || !std::isfinite(h.w_neg) ||
            (h.w_dice == 0.0 && h.w_tre == 0.0 && h.w_neg == 0.0)) {
            throw std::invalid_argument("heuristic: weights must be finite, at least one nonzero");
        }
        return h;
    }
    throw std::invalid_argument("heuristic: unknown name '" + text +
                                "' (expected dice, tre, or weighted:...)");
}

SweepEngine SweepEngine::amortized(const HyperNet& model) {
    SweepEngine e;
    e.hyper = &model;
    return e;
}

SweepEngine SweepEngine::instance_optimizer(const OptimizerConfig& config) {
    SweepEngine e;
    e.instance = config;
    return e;
}

namespace {

ComboRecord evaluate_combo(const std::vector<SweepCase>& cases, const ElasticityParams& params,
                           const SweepEngine& engine, const SweepOptions& options) {
    ComboRecord record;
    record.params = params;

    double dice_sum = 0.0, tre_sum = 0.0, tre_std_sum = 0.0;
    bool all_dice = true, all_tre = true;

    for (const SweepCase& c : cases) {
        DisplacementField field =
            engine.hyper ? predict_field(*engine.hyper, params, c.fixed.domain)
                         : register_pair(c.fixed, c.moving, params, engine.instance).field;

        PairRecord pair;
        pair.metrics = evaluate_metrics(field,
                                        c.fixed_labels ? &*c.fixed_labels : nullptr,
                                        c.moving_labels ? &*c.moving_labels : nullptr,
                                        c.fixed_keypoints ? &*c.fixed_keypoints : nullptr,
                                        c.moving_keypoints ? &*c.moving_keypoints : nullptr);
        composite_loss_eq5(c.fixed, c.moving, field, params, options.ncc_window, false,
                           &pair.terms);

        record.neg_jac_fraction += pair.metrics.neg_jac_fraction;
        record.loss_eq5 += pair.terms.loss;
        record.dissimilarity += pair.terms.dissimilarity;
        record.regularizer += pair.terms.regularizer;
        if (pair.metrics.dice_mean) dice_sum += *pair.metrics.dice_mean; else all_dice = false;
        if (pair.metrics.tre_mean_mm) {
            tre_sum += *pair.metrics.tre_mean_mm;
            tre_std_sum += *pair.metrics.tre_std_mm;
        } else {
            all_tre = false;
        }
        record.per_pair.push_back(std::move(pair));
    }

    const double inv = 1.0 / static_cast<double>(cases.size());
    record.neg_jac_fraction *= inv;
    record.loss_eq5 *= inv;
    record.dissimilarity *= inv;
    record.regularizer *= inv;
    if (all_dice) record.dice_mean = dice_sum * inv;
    if (all_tre) {
        record.tre_mean_mm = tre_sum * inv;
        record.tre_std_mm = tre_std_sum * inv;
    }
    return record;
}

}  // namespace

SweepReport run_sweep(const std::vector<SweepCase>& cases, const ParamGrid& grid,
                      const SweepEngine& engine, const SweepOptions& options) {
    if (cases.empty()) throw std::invalid_argument("run_sweep: no cases");
    if (grid.combos.empty()) throw std::invalid_argument("run_sweep: empty parameter grid");
    for (const SweepCase& c : cases) {
        require_same_domain(c.fixed.domain, c.moving.domain, "run_sweep");
        if (engine.hyper && c.fixed.domain.dim != engine.hyper->domain_dim) {
            throw std::invalid_argument("run_sweep: case dim does not match the amortized model");
        }
    }

    SweepReport report;
    report.resolution = grid.resolution;
    report.records.resize(grid.combos.size());

    // Combos are independent; records land in grid order regardless of the
    // execution order.
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, options.jobs))
#endif
    for (long long i = 0; i < static_cast<long long>(grid.combos.size()); ++i) {
        report.records[static_cast<std::size_t>(i)] =
            evaluate_combo(cases, grid.combos[static_cast<std::size_t>(i)], engine, options);
    }
    return report;
}

std::size_t select_optimum(const SweepReport& report,
                           const std::function<double(const ComboRecord&)>& score) {
    if (report.records.empty()) throw std::invalid_argument("select_optimum: empty report");
    std::size_t best = 0;
    double best_score = score(report.records[0]);
    for (std::size_t i = 1; i < report.records.size(); ++i) {
        const double s = score(report.records[i]);
        const auto& p = report.records[i].params;
        const auto& bp = report.records[best].params;
        const double sum = p.lambda_a + p.mu_a;
        const double best_sum = bp.lambda_a + bp.mu_a;
        if (s > best_score ||
            (s == best_score && (sum > best_sum || (sum == best_sum && p.mu_a > bp.mu_a)))) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

std::size_t select_optimum(const SweepReport& report, const Heuristic& heuristic) {
    return select_optimum(report,
                          [&](const ComboRecord& r) { return heuristic.score(r); });
}

ParamGrid refinement_grid(const SweepReport& first, std::size_t around) {
    if (around >= first.records.size()) {
        throw std::invalid_argument("refinement_grid: index out of range");
    }
    const ElasticityParams& center = first.records[around].params;
    const double coarse = first.resolution;
    const double fine = coarse / 5.0;

    ParamGrid grid;
    grid.resolution = fine;
    for (int di = -5; di <= 5; ++di) {
        for (int dj = -5; dj <= 5; ++dj) {
            const double lambda = center.lambda_a + di * fine;
            const double mu = center.mu_a + dj * fine;
            if (lambda < -1e-12 || mu < -1e-12 || lambda + mu > 1.0 + 1e-9) continue;
            grid.combos.emplace_back(std::max(0.0, lambda), std::max(0.0, mu));
        }
    }
    return grid;
}

namespace {

nlohmann::json record_to_json(const ComboRecord& r, bool with_pairs) {
    nlohmann::json j;
    j["lambda"] = r.params.lambda_a;
    j["mu"] = r.params.mu_a;
    j["dice_mean"] = r.dice_mean ? nlohmann::json(*r.dice_mean) : nlohmann::json();
    j["tre_mean_mm"] = r.tre_mean_mm ? nlohmann::json(*r.tre_mean_mm) : nlohmann::json();
    j["tre_std_mm"] = r.tre_std_mm ? nlohmann::json(*r.tre_std_mm) : nlohmann::json();
    j["neg_jac_fraction"] = r.neg_jac_fraction;
    j["loss_eq5"] = r.loss_eq5;
    j["dissimilarity"] = r.dissimilarity;
    j["regularizer"] = r.regularizer;
    if (with_pairs) {
        nlohmann::json pairs = nlohmann::json::array();
        for (const PairRecord& p : r.per_pair) {
            nlohmann::json pj = metrics_to_json(p.metrics);
            pj["loss_eq5"] = p.terms.loss;
            pj["dissimilarity"] = p.terms.dissimilarity;
            pj["regularizer"] = p.terms.regularizer;
            pairs.push_back(std::move(pj));
        }
        j["per_pair"] = std::move(pairs);
    }
    return j;
}

}  // namespace

nlohmann::json sweep_to_json(const SweepReport& report) {
    nlohmann::json j;
    j["resolution"] = report.resolution;
    nlohmann::json records = nlohmann::json::array();
    for (const ComboRecord& r : report.records) records.push_back(record_to_json(r, true));
    j["records"] = std::move(records);
    nlohmann::json selected = nlohmann::json::object();
    for (const auto& [name, index] : report.selected) {
        selected[name] = record_to_json(report.records[index], false);
    }
    j["selected"] = std::move(selected);
    return j;
}

std::string sweep_to_csv(const SweepReport& report) {
    std::ostringstream os;
    os << "lambda,mu,dice_mean,tre_mean_mm,neg_jac_fraction\n";
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const ComboRecord& r : report.records) {
        os << fmt(r.params.lambda_a) << "," << fmt(r.params.mu_a) << ","
           << (r.dice_mean ? fmt(*r.dice_mean) : "nan") << ","
           << (r.tre_mean_mm ? fmt(*r.tre_mean_mm) : "nan") << ","
           << fmt(r.neg_jac_fraction) << "\n";
    }
    return os.str();
}

}  // namespace elastireg
