// Cross-checks between the OpenMP kernels and the serial reference
// implementations, plus the determinism guarantees of the chunked reduction.

#include "doctest.h"

#include "elastireg/energy.hpp"
#include "elastireg/grid_ops.hpp"
#include "elastireg/parallel.hpp"
#include "elastireg/serial_ref.hpp"

#include "test_support.hpp"

using namespace elastireg;
using namespace elastireg::testing;

TEST_CASE("warp matches the serial reference bit-exactly") {
    Rng rng(61);
    const GridDomain d = GridDomain::make3d(11, 9, 7, 1.5, 1.0, 2.0);
    const ScalarGrid img = random_grid(d, rng);
    const DisplacementField f = random_field(d, rng, -2.0, 2.0);
    CHECK(warp(img, f).values == serial::warp(img, f).values);
}

TEST_CASE("forward differences match the serial reference bit-exactly") {
    Rng rng(62);
    const GridDomain d = GridDomain::make3d(8, 10, 6, 2.0, 1.5, 1.0);
    const DisplacementField f = random_field(d, rng);
    for (int axis = 0; axis < 3; ++axis) {
        for (int comp = 0; comp < 3; ++comp) {
            CHECK(forward_diff(f, comp, axis).values ==
                  serial::forward_diff(f, comp, axis).values);
        }
    }
}

TEST_CASE("jacobian determinants match the serial reference bit-exactly") {
    Rng rng(63);
    const GridDomain d = GridDomain::make3d(9, 9, 9);
    const DisplacementField f = random_field(d, rng, -1.5, 1.5);
    CHECK(jacobian_determinant(f).values == serial::jacobian_determinant(f).values);
}

TEST_CASE("box-sum ncc agrees with the brute-force serial value") {
    Rng rng(64);
    const GridDomain d = GridDomain::make2d(20, 17);
    const ScalarGrid a = random_grid(d, rng);
    const ScalarGrid b = random_grid(d, rng);
    CHECK(ncc_local(a, b, 7).value == doctest::Approx(serial::ncc_value(a, b, 7)).epsilon(1e-10));
}

TEST_CASE("energies agree with the serial references") {
    Rng rng(65);
    const GridDomain d = GridDomain::make3d(7, 8, 9, 1.0, 2.0, 1.5);
    const DisplacementField f = random_field(d, rng);
    CHECK(diffusion_energy(f).value ==
          doctest::Approx(serial::diffusion_value(f)).epsilon(1e-12));
    CHECK(elastic_energy(f, RawElasticity(0.8, 1.7)).value ==
          doctest::Approx(serial::elastic_value(f, 0.8, 1.7)).epsilon(1e-12));
}

TEST_CASE("chunked reduction is bit-identical across thread counts") {
    Rng rng(66);
    std::vector<double> values(20000);
    for (double& v : values) v = rng.uniform(-1.0, 1.0);

    const int restore = max_threads();
    set_threads(1);
    const double sum1 = par_sum(values.size(), [&](std::size_t i) { return values[i]; });
    set_threads(3);
    const double sum3 = par_sum(values.size(), [&](std::size_t i) { return values[i]; });
    set_threads(restore);
    CHECK(sum1 == sum3);
}

TEST_CASE("ncc evaluation is bit-reproducible across repeated runs and thread counts") {
    Rng rng(67);
    const GridDomain d = GridDomain::make2d(30, 26);
    const ScalarGrid a = random_grid(d, rng);
    const ScalarGrid b = random_grid(d, rng);
    const NccContext ctx(a, 9);

    const int restore = max_threads();
    set_threads(2);
    const NccResult r1 = ctx.evaluate(b, true);
    set_threads(4);
    const NccResult r2 = ctx.evaluate(b, true);
    set_threads(restore);
    CHECK(r1.value == r2.value);
    CHECK(r1.d_moving->values == r2.d_moving->values);
}
