#pragma once

#include <cstdint>
#include <string_view>

namespace stockpot {

// Seed-stream derivation. Independent streams are keyed by (seed, labels),
// so sampling one model or one unit never depends on how many others exist.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t hash = 1469598103934665603ull;
    for (const char c : text) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 1099511628211ull;
    }
    return hash;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                 std::uint64_t index = 0) {
    return splitmix64(splitmix64(seed ^ fnv1a(label)) ^ index);
}

}  // namespace stockpot
