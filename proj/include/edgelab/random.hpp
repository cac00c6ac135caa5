#pragma once

#include <cstdint>
#include <random>

namespace edgelab {

// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seed of the stream for sample `index` under `master_seed`:
//   seed = splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x632BE59BD9B4E019))
// Every sample owns an independent std::mt19937_64, so streams do not
// depend on the order in which samples are generated.
constexpr std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

inline std::mt19937_64 make_stream(std::uint64_t master_seed, std::uint64_t index) {
    return std::mt19937_64(stream_seed(master_seed, index));
}

// Uniform on [0, 1) from the top 53 bits; does not rely on
// implementation-defined distribution classes.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace edgelab
