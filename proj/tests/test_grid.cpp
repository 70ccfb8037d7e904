#include "doctest.h"

#include <stdexcept>

#include "elastireg/grid.hpp"
#include "elastireg/grid_ops.hpp"
#include "elastireg/rng.hpp"

#include "test_support.hpp"

using namespace elastireg;
using namespace elastireg::testing;

TEST_CASE("grid domain validation") {
    CHECK_THROWS_AS(GridDomain(4, {2, 2, 2}, {1, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(GridDomain::make2d(0, 4), std::invalid_argument);
    CHECK_THROWS_AS(GridDomain::make2d(4, 4, 0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(GridDomain(2, {4, 4, 2}, {1, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(ScalarGrid(GridDomain::make2d(4, 4), std::vector<double>(15, 0.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(DisplacementField(GridDomain::make2d(4, 4), std::vector<double>(33, 0.0)),
                    std::invalid_argument);
}

TEST_CASE("warp with zero field is the identity, bit-exact") {
    Rng rng(42);
    const GridDomain d = GridDomain::make3d(7, 6, 5);
    const ScalarGrid img = random_grid(d, rng);
    const ScalarGrid out = warp(img, DisplacementField(d));
    CHECK(out.values == img.values);
}

TEST_CASE("warp shifts a ramp by one voxel with edge clamping") {
    const GridDomain d = GridDomain::make2d(4, 1);
    const ScalarGrid img(d, {0.0, 1.0, 2.0, 3.0});
    const DisplacementField f = make_field(d, [](int c, int, int, int) {
        return c == 0 ? 1.0 : 0.0;
    });
    const ScalarGrid out = warp(img, f);
    CHECK(out.values == std::vector<double>{1.0, 2.0, 3.0, 3.0});
}

TEST_CASE("warp interpolates a half-voxel backward shift") {
    const GridDomain d = GridDomain::make2d(4, 1);
    const ScalarGrid img(d, {0.0, 1.0, 2.0, 3.0});
    const DisplacementField f = make_field(d, [](int c, int, int, int) {
        return c == 0 ? -0.5 : 0.0;
    });
    const ScalarGrid out = warp(img, f);
    CHECK(out.values == std::vector<double>{0.0, 0.5, 1.5, 2.5});
}

TEST_CASE("warp of a constant image is that constant for any field") {
    Rng rng(7);
    const GridDomain d = GridDomain::make2d(9, 8);
    const ScalarGrid img = make_grid(d, [](int, int, int) { return 3.25; });
    const DisplacementField f = random_field(d, rng, -4.0, 4.0);
    const ScalarGrid out = warp(img, f);
    for (double v : out.values) CHECK(v == doctest::Approx(3.25).epsilon(1e-14));
}

TEST_CASE("warp equals an index shift for integer translations") {
    Rng rng(13);
    const GridDomain d = GridDomain::make3d(6, 5, 4);
    const ScalarGrid img = random_grid(d, rng);
    const DisplacementField f = make_field(d, [](int c, int, int, int) {
        return c == 1 ? 2.0 : 0.0;
    });
    const ScalarGrid out = warp(img, f);
    for (int z = 0; z < 4; ++z) {
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 6; ++x) {
                CHECK(out.at(x, y, z) == img.at(x, std::min(y + 2, 4), z));
            }
        }
    }
}

TEST_CASE("warp rejects mismatched domains") {
    const ScalarGrid img(GridDomain::make2d(4, 4));
    const DisplacementField f(GridDomain::make2d(4, 5));
    CHECK_THROWS_AS(warp(img, f), std::invalid_argument);
}

TEST_CASE("forward_diff of a linear ramp is its slope on interior voxels") {
    const GridDomain d = GridDomain::make2d(6, 5);
    const DisplacementField f = make_field(d, [](int c, int x, int, int) {
        return c == 0 ? 0.5 * x : 0.0;
    });
    const ScalarGrid g = forward_diff(f, 0, 0);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 6; ++x) {
            CHECK(g.at(x, y) == (x < 5 ? 0.5 : 0.0));
        }
    }

    // Spacing divides the difference.
    const GridDomain ds = GridDomain::make2d(6, 5, 2.0, 1.0);
    const DisplacementField fs = make_field(ds, [](int c, int x, int, int) {
        return c == 0 ? 0.5 * x : 0.0;
    });
    CHECK(forward_diff(fs, 0, 0).at(2, 2) == 0.25);
}

TEST_CASE("forward_diff of a constant field vanishes") {
    const GridDomain d = GridDomain::make3d(4, 4, 4);
    const DisplacementField f = make_field(d, [](int, int, int, int) { return 3.0; });
    for (int axis = 0; axis < 3; ++axis) {
        for (int comp = 0; comp < 3; ++comp) {
            for (double v : forward_diff(f, comp, axis).values) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("forward_diff is linear in the field") {
    Rng rng(3);
    const GridDomain d = GridDomain::make3d(5, 6, 4, 2.0, 1.5, 1.0);
    const DisplacementField u = random_field(d, rng);
    const DisplacementField v = random_field(d, rng);
    const double a = 0.375, b = -1.25;
    DisplacementField mix(d);
    for (std::size_t i = 0; i < mix.vectors.size(); ++i) {
        mix.vectors[i] = a * u.vectors[i] + b * v.vectors[i];
    }
    for (int axis = 0; axis < 3; ++axis) {
        for (int comp = 0; comp < 3; ++comp) {
            const ScalarGrid gm = forward_diff(mix, comp, axis);
            const ScalarGrid gu = forward_diff(u, comp, axis);
            const ScalarGrid gv = forward_diff(v, comp, axis);
            for (std::size_t i = 0; i < gm.values.size(); ++i) {
                const double want = a * gu.values[i] + b * gv.values[i];
                CHECK(gm.values[i] == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("forward_diff rejects out-of-range axes") {
    const DisplacementField f(GridDomain::make2d(4, 4));
    CHECK_THROWS_AS(forward_diff(f, 2, 0), std::invalid_argument);
    CHECK_THROWS_AS(forward_diff(f, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(forward_diff(f, -1, 0), std::invalid_argument);
}

TEST_CASE("jacobian determinant of the zero field is exactly one") {
    const DisplacementField f(GridDomain::make3d(5, 4, 3));
    for (double v : jacobian_determinant(f).values) CHECK(v == 1.0);
}

TEST_CASE("jacobian determinant of a uniform dilation") {
    const GridDomain d = GridDomain::make3d(6, 6, 6);
    const DisplacementField f = make_field(d, [](int c, int x, int y, int z) {
        const int pos[3] = {x, y, z};
        return 0.5 * pos[c];
    });
    const ScalarGrid det = jacobian_determinant(f);
    for (int z = 0; z < 5; ++z) {
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 5; ++x) {
                CHECK(det.at(x, y, z) == doctest::Approx(3.375).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("jacobian determinant detects a one-axis fold") {
    const GridDomain d = GridDomain::make2d(8, 8);
    const DisplacementField f = make_field(d, [](int c, int x, int, int) {
        return c == 0 ? -2.0 * x : 0.0;
    });
    const ScalarGrid det = jacobian_determinant(f);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 7; ++x) CHECK(det.at(x, y) == doctest::Approx(-1.0));
    }
}

TEST_CASE("jacobian determinant of a translation is exactly one") {
    const GridDomain d = GridDomain::make2d(7, 7);
    const DisplacementField f = make_field(d, [](int, int, int, int) { return 7.25; });
    for (double v : jacobian_determinant(f).values) CHECK(v == 1.0);
}

TEST_CASE("jacobian determinant ignores spacing (voxel units)") {
    Rng rng(5);
    const GridDomain d1 = GridDomain::make2d(6, 6, 1.0, 1.0);
    const GridDomain d2 = GridDomain::make2d(6, 6, 3.0, 0.5);
    const DisplacementField f1 = random_field(d1, rng);
    const DisplacementField f2(d2, f1.vectors);
    CHECK(jacobian_determinant(f1).values == jacobian_determinant(f2).values);
}

TEST_CASE("interior predicate excludes the last slice of every axis") {
    const GridDomain d = GridDomain::make2d(4, 3);
    CHECK(is_interior_voxel(d, d.index(0, 0, 0)));
    CHECK(is_interior_voxel(d, d.index(2, 1, 0)));
    CHECK_FALSE(is_interior_voxel(d, d.index(3, 1, 0)));
    CHECK_FALSE(is_interior_voxel(d, d.index(2, 2, 0)));
}
