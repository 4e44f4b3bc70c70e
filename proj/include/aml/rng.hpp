#pragma once

#include <cstdint>
#include <string_view>

namespace aml {

/// splitmix64 step; used for seeding and for hashing stream tags.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// xoshiro256** seeded through splitmix64. Output depends only on the seed,
/// never on the platform's <random> implementation.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) noexcept;

    /// Independent stream for a named pipeline stage (seed + stage tag).
    static SeededRng derive(std::uint64_t seed, std::string_view tag) noexcept;

    std::uint64_t next_u64() noexcept;

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform01() noexcept;
    double uniform(double lo, double hi) noexcept;

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() noexcept;

private:
    std::uint64_t s_[4];
};

}  // namespace aml
