#pragma once

#include <cstdint>

namespace cmatch {

/// Independent, reproducible seed for a named sub-stream of an experiment
/// seed (splitmix64 finalizer over seed and stream id).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace cmatch
