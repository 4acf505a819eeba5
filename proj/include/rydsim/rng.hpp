#pragma once

#include <cstdint>
#include <random>

namespace rydsim {

// All stochastic operations take explicit 64-bit seeds and draw through these
// helpers so that results are identical across platforms and standard library
// implementations (std::uniform_real_distribution is not pinned by the
// standard; the mapping below is).

inline double uniform_unit(std::mt19937_64& gen) {
    // 53 random bits into [0,1).
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on pinned uniforms.
inline double normal_unit(std::mt19937_64& gen) {
    double u1 = uniform_unit(gen);
    double u2 = uniform_unit(gen);
    while (u1 <= 0.0) u1 = uniform_unit(gen);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

// Per-shard seed derivation for campaigns that fan out over workers:
// shard k of a run seeded with `seed` uses derive_seed(seed, k).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t shard) {
    // splitmix64 step on seed + shard.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (shard + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace rydsim
