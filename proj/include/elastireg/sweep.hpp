#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "elastireg/amortizer.hpp"
#include "elastireg/energy.hpp"
#include "elastireg/grid.hpp"
#include "elastireg/metrics.hpp"
#include "elastireg/registration.hpp"

#include "json.hpp"

namespace elastireg {

// All (lambda_a, mu_a) multiples of `resolution` with lambda_a + mu_a <= 1,
// sorted lexicographically.
struct ParamGrid {
    double resolution = 0.1;
    std::vector<ElasticityParams> combos;
};

// 1/resolution must be integral.
ParamGrid enumerate_grid(double resolution);

struct SweepCase {
    ScalarGrid fixed;
    ScalarGrid moving;
    std::optional<LabelGrid> fixed_labels;
    std::optional<LabelGrid> moving_labels;
    std::optional<KeypointSet> fixed_keypoints;
    std::optional<KeypointSet> moving_keypoints;
};

struct PairRecord {
    MetricsReport metrics;
    LossTerms terms;
};

struct ComboRecord {
    ElasticityParams params;
    std::vector<PairRecord> per_pair;
    // Unweighted means over pairs.
    std::optional<double> dice_mean;
    std::optional<double> tre_mean_mm;
    std::optional<double> tre_std_mm;
    double neg_jac_fraction = 0.0;
    double loss_eq5 = 0.0;
    double dissimilarity = 0.0;
    double regularizer = 0.0;
};

struct SweepReport {
    double resolution = 0.1;
    std::vector<ComboRecord> records;
    // heuristic name -> index into records, filled by the caller.
    std::map<std::string, std::size_t> selected;
};

// Scores are maximized; ties break toward larger lambda_a + mu_a, then
// larger mu_a.
struct Heuristic {
    enum class Kind { MaxDice, MinTre, Weighted };
    Kind kind = Kind::MaxDice;
    std::string name = "dice";
    double w_dice = 0.0, w_tre = 0.0, w_neg = 0.0;

    double score(const ComboRecord& record) const;

    // "dice" | "tre" | "weighted:<w_dice>,<w_tre>,<w_neg>"
    static Heuristic parse(const std::string& text);
};

// Amortized prediction when `hyper` is set, per-combo instance optimization
// otherwise.
struct SweepEngine {
    const HyperNet* hyper = nullptr;
    OptimizerConfig instance;

    static SweepEngine amortized(const HyperNet& model);
    static SweepEngine instance_optimizer(const OptimizerConfig& config);
};

struct SweepOptions {
    int jobs = 1;
    int ncc_window = kDefaultNccWindow;
};

SweepReport run_sweep(const std::vector<SweepCase>& cases, const ParamGrid& grid,
                      const SweepEngine& engine, const SweepOptions& options = {});

// Argmax of `score` over the records with the tie rule above.
std::size_t select_optimum(const SweepReport& report,
                           const std::function<double(const ComboRecord&)>& score);
std::size_t select_optimum(const SweepReport& report, const Heuristic& heuristic);

// Second pass at resolution/5 on the box around the first-pass optimum.
ParamGrid refinement_grid(const SweepReport& first, std::size_t around);

nlohmann::json sweep_to_json(const SweepReport& report);
std::string sweep_to_csv(const SweepReport& report);

}  // namespace elastireg
