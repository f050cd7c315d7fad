#pragma once
#include <cstdint>
#include <random>
#include <string_view>

namespace spikeforest {

// Counter-based stream splitting. Every random task derives its own engine
// from (master seed, module tag, job index), so results are reproducible and
// never depend on thread scheduling or worker count.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace detail

using rng_t = std::mt19937_64;

inline rng_t make_stream(std::uint64_t seed, std::string_view tag,
                         std::uint64_t index = 0) {
    std::uint64_t state = seed;
    state ^= detail::fnv1a(tag) + 0x9e3779b97f4a7c15ull;
    (void)detail::splitmix64(state);
    state ^= index;
    std::uint64_t w[4];
    for (auto& wi : w) wi = detail::splitmix64(state);
    std::seed_seq seq{
        static_cast<std::uint32_t>(w[0]), static_cast<std::uint32_t>(w[0] >> 32),
        static_cast<std::uint32_t>(w[1]), static_cast<std::uint32_t>(w[1] >> 32),
        static_cast<std::uint32_t>(w[2]), static_cast<std::uint32_t>(w[2] >> 32),
        static_cast<std::uint32_t>(w[3]), static_cast<std::uint32_t>(w[3] >> 32)};
    return rng_t(seq);
}

// 64-bit sub-seed for components that manage their own streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t state = seed;
    state ^= detail::fnv1a(tag) + 0x9e3779b97f4a7c15ull;
    (void)detail::splitmix64(state);
    state ^= ~index;
    return detail::splitmix64(state);
}

inline double rand_u(rng_t& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Uniform integer in [0, n).
inline int rand_index(rng_t& rng, int n) {
    return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

inline double rand_normal(rng_t& rng, double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(rng);
}

} // namespace spikeforest
