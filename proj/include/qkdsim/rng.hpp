#pragma once

#include <cstdint>
#include <random>

namespace qkdsim {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace detail

/// Independent generator for substream `stream_id` of a master seed.
/// The mapping depends only on (seed, stream_id), so shard layouts are
/// reproducible regardless of how many workers execute them.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = seed ^ (0xd1b54a32d192ed03ull * (stream_id + 1));
    std::seed_seq seq{detail::splitmix64(s), detail::splitmix64(s),
                      detail::splitmix64(s), detail::splitmix64(s)};
    return std::mt19937_64(seq);
}

/// Uniform double in [0, 1) with 53 random bits. Hand-rolled so streams are
/// identical across standard library implementations.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace qkdsim
