#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace molt {

// Deterministic random source. All randomness in the library flows through
// this class so that a run is reproducible from its seed: the generator is
// mt19937_64 (sequence fixed by the standard) and every derived draw below
// is computed from raw 64-bit words rather than through the distribution
// classes, whose output is implementation-defined.
class Rng {
 public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // Standard normal via Box-Muller. Draws two uniforms per call and uses
    // one branch; no spare is cached so the stream position is predictable.
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal truncated to [-2*sigma, 2*sigma], the usual transformer
    // initializer.
    double truncated_normal(double sigma) {
        for (;;) {
            const double x = sigma * normal();
            if (x >= -2.0 * sigma && x <= 2.0 * sigma) return x;
        }
    }

 private:
    std::mt19937_64 engine_;
};

// FNV-1a, used to derive stable per-image seeds from a run seed and an
// image id so that per-image work is order-independent.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (const char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    return base ^ fnv1a64(tag);
}

}  // namespace molt
