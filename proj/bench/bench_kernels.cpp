// Timing comparison between the OpenMP kernels and the serial reference
// implementations. Build and run manually:
//   cmake --build build --target bench_kernels && ./build/bench/bench_kernels

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "elastireg/energy.hpp"
#include "elastireg/grid_ops.hpp"
#include "elastireg/parallel.hpp"
#include "elastireg/rng.hpp"
#include "elastireg/serial_ref.hpp"

using namespace elastireg;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) fn();
    const double total =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return total / repeats;
}

void row(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx   max|diff| %.3g\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms, diff);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

int main() {
    std::printf("threads: %d\n", max_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    Rng rng(1);
    const GridDomain d3 = GridDomain::make3d(96, 96, 64);
    ScalarGrid img(d3);
    for (double& v : img.values) v = rng.uniform(0.0, 1.0);
    DisplacementField field(d3);
    for (double& v : field.vectors) v = rng.uniform(-2.0, 2.0);

    {
        ScalarGrid out_s, out_p;
        const double ts = time_ms([&] { out_s = serial::warp(img, field); }, 3);
        const double tp = time_ms([&] { out_p = warp(img, field); }, 3);
        row("warp 96x96x64", ts, tp, max_abs_diff(out_s.values, out_p.values));
    }
    {
        ScalarGrid out_s, out_p;
        const double ts = time_ms([&] { out_s = serial::jacobian_determinant(field); }, 3);
        const double tp = time_ms([&] { out_p = jacobian_determinant(field); }, 3);
        row("jacobian det 96x96x64", ts, tp, max_abs_diff(out_s.values, out_p.values));
    }
    {
        double vs = 0.0, vp = 0.0;
        const double ts = time_ms([&] { vs = serial::elastic_value(field, 0.8, 1.2); }, 3);
        const double tp =
            time_ms([&] { vp = elastic_energy(field, RawElasticity(0.8, 1.2)).value; }, 3);
        row("elastic energy 96x96x64", ts, tp, std::abs(vs - vp));
    }

    // The serial NCC is O(N window^D); keep its grid modest.
    const GridDomain d2 = GridDomain::make2d(256, 256);
    ScalarGrid a(d2), b(d2);
    for (double& v : a.values) v = rng.uniform(0.0, 1.0);
    for (double& v : b.values) v = rng.uniform(0.0, 1.0);
    {
        double vs = 0.0, vp = 0.0;
        const double ts = time_ms([&] { vs = serial::ncc_value(a, b, 9); }, 1);
        const double tp = time_ms([&] { vp = ncc_local(a, b, 9).value; }, 1);
        row("ncc 256x256 w9 (box sums)", ts, tp, std::abs(vs - vp));
    }

    return 0;
}
