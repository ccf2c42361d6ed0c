#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace semflow {

/// Deterministic random stream.  Wraps mt19937_64 but derives floating-point
/// variates by hand: the standard distributions are implementation-defined,
/// and reproducibility across toolchains matters more than their niceties.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (the cached second variate is dropped
    /// so the stream consumption per call is fixed).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the result unbiased.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return x % n;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace semflow
