#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mea {

/// mt19937_64 with explicit bit-to-value mappings. std::*_distribution output
/// is implementation-defined, which would break byte-identical dataset
/// reproduction across toolchains, so the mappings live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Derives an independent per-item stream, e.g. (dataset seed, sample index).
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
        // splitmix64 finalizer decorrelates consecutive indices
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    std::uint64_t bits() { return engine_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + int(double(hi - lo + 1) * uniform());
    }

    /// Standard normal via Box-Muller (deterministic given the engine state).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mea
