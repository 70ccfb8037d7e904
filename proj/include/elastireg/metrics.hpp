#pragma once

#include <array>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "elastireg/grid.hpp"

namespace elastireg {

// Point landmarks in physical millimetre coordinates (voxel centre i lies at
// i * spacing). 2-D sets carry z == 0.
struct KeypointSet {
    std::vector<std::array<double, 3>> points_mm;

    std::size_t size() const { return points_mm.size(); }
};

struct MetricsReport {
    std::map<std::int32_t, double> dice_per_label;
    std::optional<double> dice_mean;
    std::optional<double> tre_mean_mm;
    std::optional<double> tre_std_mm;
    double neg_jac_fraction = 0.0;
};

// 2|A n B| / (|A| + |B|) for one label value; 1.0 when both sets are empty.
double dice(const LabelGrid& a, const LabelGrid& b, std::int32_t label);

// Per-label Dice over the union of nonzero labels present in either grid,
// plus their mean. Empty map and mean 1.0 when both grids are background-only.
std::pair<std::map<std::int32_t, double>, double> dice_all_labels(const LabelGrid& a,
                                                                  const LabelGrid& b);

// Nearest-neighbour resampling of labels at x + u(x); sample coordinates are
// clamped to the domain and rounded half away from zero.
LabelGrid warp_labels(const LabelGrid& labels, const DisplacementField& field);

// Mean/std (population) of |phi(p_fixed) - p_moving| in millimetres, with phi
// sampled from `field` by multilinear interpolation. Fixed keypoints are
// mapped into moving space and compared against the moving keypoints.
std::pair<double, double> tre(const KeypointSet& fixed_pts, const KeypointSet& moving_pts,
                              const DisplacementField& field);

// Fraction of interior voxels with det(I + grad u) < 0, restricted to
// mask > 0 when a mask is given.
double neg_jac_fraction(const DisplacementField& field, const LabelGrid* mask = nullptr);

// Convenience bundle: computes whatever the available evaluation data allows.
MetricsReport evaluate_metrics(const DisplacementField& field,
                               const LabelGrid* fixed_labels, const LabelGrid* moving_labels,
                               const KeypointSet* fixed_keypoints,
                               const KeypointSet* moving_keypoints);

}  // namespace elastireg
