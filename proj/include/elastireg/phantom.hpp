#pragma once

#include <array>
#include <cstdint>

#include "elastireg/grid.hpp"
#include "elastireg/metrics.hpp"

namespace elastireg {

// Synthetic registration case with exact ground truth. The fixed image
// samples an analytic pattern P; the moving image samples P pulled back
// through the inverse of psi(x) = x + t(x), so that warping the moving image
// by the true field t reproduces the fixed image and t is the field a perfect
// registration recovers. Keypoints are the analytic feature centres mapped
// through t; labels are the supports of the labelled blobs in each frame.
struct PhantomSpec {
    enum class Pattern { GaussianBlobs, CheckerSmooth };
    enum class FieldFamily { Affine, GaussianBump, Rotation };

    GridDomain domain = GridDomain::make2d(64, 64);
    Pattern pattern = Pattern::GaussianBlobs;
    FieldFamily family = FieldFamily::GaussianBump;

    // gaussian-bump family: peak displacement magnitude (voxels) and kernel
    // width (voxels; 0 selects 0.18 * min dim).
    double amplitude = 3.0;
    double bump_sigma = 0.0;

    // rotation family: in-plane angle about the domain centre.
    double angle_deg = 5.0;

    // affine family: u(x) = (A - I)(x - centre) + shift, row-major 3x3.
    std::array<double, 9> affine = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<double, 3> shift = {0, 0, 0};

    int blob_count = 6;           // 1 labelled primary + texture blobs
    double checker_period = 0.0;  // 0 selects min dim / 4

    std::uint64_t seed = 1;
    // Seeds the field geometry (bump centre jitter) separately, so several
    // phantoms can share one true deformation over different textures;
    // 0 reuses `seed`.
    std::uint64_t field_seed = 0;
    bool allow_folding = false;   // skip the min-det invertibility check
};

struct Phantom {
    ScalarGrid fixed;
    ScalarGrid moving;
    DisplacementField true_field;
    LabelGrid fixed_labels;
    LabelGrid moving_labels;
    KeypointSet fixed_keypoints;
    KeypointSet moving_keypoints;
};

Phantom make_phantom(const PhantomSpec& spec);

}  // namespace elastireg
