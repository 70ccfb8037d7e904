#include "elastireg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "elastireg/grid_ops.hpp"
#include "elastireg/parallel.hpp"

namespace elastireg {

double dice(const LabelGrid& a, const LabelGrid& b, std::int32_t label) {
    require_same_domain(a.domain, b.domain, "dice");
    std::size_t count_a = 0, count_b = 0, overlap = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const bool in_a = a.labels[i] == label;
        const bool in_b = b.labels[i] == label;
        count_a += in_a;
        count_b += in_b;
        overlap += in_a && in_b;
    }
    if (count_a + count_b == 0) return 1.0;
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(count_a + count_b);
}

std::pair<std::map<std::int32_t, double>, double> dice_all_labels(const LabelGrid& a,
                                                                  const LabelGrid& b) {
    require_same_domain(a.domain, b.domain, "dice");
    std::set<std::int32_t> labels;
    for (std::int32_t v : a.labels) {
        if (v != 0) labels.insert(v);
    }
    for (std::int32_t v : b.labels) {
        if (v != 0) labels.insert(v);
    }
    std::map<std::int32_t, double> per_label;
    double sum = 0.0;
    for (std::int32_t label : labels) {
        const double d = dice(a, b, label);
        per_label[label] = d;
        sum += d;
    }
    const double mean = labels.empty() ? 1.0 : sum / static_cast<double>(labels.size());
    return {per_label, mean};
}

LabelGrid warp_labels(const LabelGrid& labels, const DisplacementField& field) {
    require_same_domain(labels.domain, field.domain, "warp_labels");
    const GridDomain& d = labels.domain;
    LabelGrid out(d);
    const int nx = d.dims[0], ny = d.dims[1];
    par_for(d.voxel_count(), [&](std::size_t idx) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(nx));
        const int y = static_cast<int>((idx / static_cast<std::size_t>(nx)) %
                                       static_cast<std::size_t>(ny));
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) *
                                              static_cast<std::size_t>(ny)));
        const double pos[3] = {x + field.comp(0, idx), y + field.comp(1, idx),
                               d.dim == 3 ? z + field.comp(2, idx) : 0.0};
        int nearest[3] = {0, 0, 0};
        for (int a = 0; a < d.dim; ++a) {
            const double clamped =
                std::clamp(pos[a], 0.0, static_cast<double>(d.dims[a] - 1));
            // Round half away from zero; coordinates are >= 0 after clamping.
            nearest[a] = static_cast<int>(std::llround(clamped));
        }
        out.labels[idx] = labels.at(nearest[0], nearest[1], nearest[2]);
    });
    return out;
}

std::pair<double, double> tre(const KeypointSet& fixed_pts, const KeypointSet& moving_pts,
                              const DisplacementField& field) {
    if (fixed_pts.size() != moving_pts.size()) {
        throw std::invalid_argument("tre: keypoint counts differ (" +
                                    std::to_string(fixed_pts.size()) + " vs " +
                                    std::to_string(moving_pts.size()) + ")");
    }
    if (fixed_pts.size() == 0) throw std::invalid_argument("tre: empty keypoint sets");
    const GridDomain& d = field.domain;

    auto check_in_domain = [&](const std::array<double, 3>& p, const char* which) {
        for (int a = 0; a < 3; ++a) {
            const double hi = a < d.dim ? d.extent_mm(a) : 0.0;
            if (!std::isfinite(p[a]) || p[a] < 0.0 || p[a] > hi) {
                throw std::invalid_argument(std::string("tre: ") + which +
                                            " keypoint outside the physical domain");
            }
        }
    };

    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t k = 0; k < fixed_pts.size(); ++k) {
        const auto& pf = fixed_pts.points_mm[k];
        const auto& pm = moving_pts.points_mm[k];
        check_in_domain(pf, "fixed");
        check_in_domain(pm, "moving");

        // mm -> voxel coordinates of the fixed point.
        const double vx = pf[0] / d.spacing[0];
        const double vy = pf[1] / d.spacing[1];
        const double vz = d.dim == 3 ? pf[2] / d.spacing[2] : 0.0;

        double dist_sq = 0.0;
        for (int c = 0; c < d.dim; ++c) {
            const double u_vox = sample_field_linear(field, c, vx, vy, vz);
            const double mapped = pf[c] + u_vox * d.spacing[c];
            const double delta = mapped - pm[c];
            dist_sq += delta * delta;
        }
        const double dist = std::sqrt(dist_sq);
        sum += dist;
        sum_sq += dist * dist;
    }
    const double n = static_cast<double>(fixed_pts.size());
    const double mean = sum / n;
    const double variance = std::max(0.0, sum_sq / n - mean * mean);
    return {mean, std::sqrt(variance)};
}

double neg_jac_fraction(const DisplacementField& field, const LabelGrid* mask) {
    if (mask) require_same_domain(field.domain, mask->domain, "neg_jac_fraction");
    const ScalarGrid det = jacobian_determinant(field);
    std::size_t considered = 0, negative = 0;
    for (std::size_t i = 0; i < det.values.size(); ++i) {
        if (!is_interior_voxel(field.domain, i)) continue;
        if (mask && mask->labels[i] <= 0) continue;
        ++considered;
        negative += det.values[i] < 0.0;
    }
    if (considered == 0) return 0.0;
    return static_cast<double>(negative) / static_cast<double>(considered);
}

MetricsReport evaluate_metrics(const DisplacementField& field, const LabelGrid* fixed_labels,
                               const LabelGrid* moving_labels,
                               const KeypointSet* fixed_keypoints,
                               const KeypointSet* moving_keypoints) {
    MetricsReport report;
    report.neg_jac_fraction = neg_jac_fraction(field);
    if (fixed_labels && moving_labels) {
        const LabelGrid warped = warp_labels(*moving_labels, field);
        auto [per_label, mean] = dice_all_labels(warped, *fixed_labels);
        report.dice_per_label = std::move(per_label);
        report.dice_mean = mean;
    }
    if (fixed_keypoints && moving_keypoints) {
        const auto [mean, sd] = tre(*fixed_keypoints, *moving_keypoints, field);
        report.tre_mean_mm = mean;
        report.tre_std_mm = sd;
    }
    return report;
}

}  // namespace elastireg
