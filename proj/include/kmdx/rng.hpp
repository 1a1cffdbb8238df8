#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace kmdx {

// Deterministic named substreams: every consumer of randomness derives its
// own generator from (global seed, tag), so the set or order of consumers
// can change without perturbing unrelated streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(const std::string& tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::mt19937_64 rng_for(std::uint64_t seed, const std::string& tag) {
    return std::mt19937_64(splitmix64(seed ^ hash_tag(tag)));
}

inline std::mt19937_64 rng_for(std::uint64_t seed, const std::string& tag,
                               std::uint64_t index) {
    return std::mt19937_64(
        splitmix64(splitmix64(seed ^ hash_tag(tag)) + index));
}

}  // namespace kmdx
