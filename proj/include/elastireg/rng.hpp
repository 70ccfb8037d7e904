#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace elastireg {

// Deterministic RNG. Distributions are implemented here instead of using
// std::uniform_real_distribution, whose output is implementation-defined;
// the same seed yields the same sequence on every platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t next_below(std::size_t n) {
        // Modulo bias is negligible for n << 2^64.
        return static_cast<std::size_t>(engine_() % n);
    }

    // Box-Muller; one value per call, no cached spare (keeps replay simple).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace elastireg
