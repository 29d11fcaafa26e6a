#pragma once

#include <cstdint>

namespace loraseg {

// splitmix64 of the global seed mixed with an index; used wherever per-item
// seeds must not depend on iteration order or thread count.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
    std::uint64_t z = global_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace loraseg
