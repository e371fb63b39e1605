#pragma once

// Deterministic, splittable seeding for reproducible simulation.
//
// Every unit of work (a scenario point, a Monte Carlo resample) gets its own
// generator whose seed is a pure function of the run seed and the unit's
// identity, never of scheduling order. That makes results independent of the
// number of worker threads.

#include <bit>
#include <cstdint>
#include <random>
#include <string_view>

namespace qmem::rng {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t hash_label(std::string_view label) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t key_of(double value) noexcept {
    // +0.0 and -0.0 name the same storage time.
    return std::bit_cast<std::uint64_t>(value == 0.0 ? 0.0 : value);
}

/// Derive a child seed from a parent seed and any number of stream keys.
template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t parent, Keys... keys) noexcept {
    std::uint64_t s = mix64(parent);
    ((s = mix64(s ^ static_cast<std::uint64_t>(keys))), ...);
    return s;
}

inline Engine make_engine(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return Engine(seq);
}

} // namespace qmem::rng
