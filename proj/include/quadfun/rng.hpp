#pragma once

#include <cstdint>
#include <random>

namespace quadfun {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Child seed for stream `index` under `parent`. Depends only on the pair, so
/// replications can run in any order on any worker.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
    return mix64(mix64(parent) ^ mix64(index ^ 0xd1b54a32d192ed03ULL));
}

inline Engine make_stream(std::uint64_t parent, std::uint64_t index) {
    return Engine(derive_seed(parent, index));
}

/// Uniform draw on [0, 1) from the top 53 bits of one engine word.
inline double uniform01(Engine& engine) {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

}  // namespace quadfun
