#pragma once

#include <cstdint>

namespace tta {

// SplitMix64 (Steele, Lea, Flood 2014). One 64-bit state word, one draw per
// output. Chosen so that weight files and synthetic pools can be reproduced
// bit-exactly from the seed in any language.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 mantissa bits.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [-bound, bound).
    double next_symmetric(double bound) { return (2.0 * next_unit() - 1.0) * bound; }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next() % n; }

private:
    std::uint64_t state_;
};

} // namespace tta
