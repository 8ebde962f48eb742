#pragma once

#include <cstdint>

namespace ftk {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// One SplitMix64 output for state x (advance by the golden gamma, then finalize).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    std::uint64_t z = x + kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Seed of the per-sample stream: splitmix64(base ^ epoch * golden ^ index).
constexpr std::uint64_t stream_seed(std::uint64_t base, std::uint64_t epoch, std::uint64_t index) {
    return splitmix64(base ^ (epoch * kGolden) ^ index);
}

/// SplitMix64 generator. Small, fast, and trivially reproducible in any language.
class SplitMix64 {
  public:
    explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

    constexpr std::uint64_t next() {
        std::uint64_t z = (state_ += kGolden);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Rejection keeps it unbiased.
    constexpr std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r = next();
        while (r >= limit) {
            r = next();
        }
        return r % n;
    }

    // std::uniform_random_bit_generator surface.
    using result_type = std::uint64_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    constexpr result_type operator()() { return next(); }

  private:
    std::uint64_t state_;
};

} // namespace ftk
