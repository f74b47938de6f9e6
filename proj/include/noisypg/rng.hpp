#pragma once

#include <cstdint>
#include <random>

namespace noisypg {

using RandomStream = std::mt19937_64;

// SplitMix64 finalizer. Spreads low-entropy seeds over the full 64-bit range
// so that nearby (seed, stream) pairs yield unrelated generator states.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives an independent substream from a base seed. Every consumer of
// randomness takes an explicit stream: sampler, channel and appeal streams
// are separated so that enabling or disabling one never perturbs another.
inline RandomStream make_stream(std::uint64_t seed, std::uint64_t stream_id) {
    return RandomStream(mix64(mix64(seed) ^ mix64(stream_id)));
}

// Uniform draw in [0, 1). Wrapped so every module draws through the same
// distribution object semantics.
inline double uniform01(RandomStream& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Bernoulli event with probability p. p = 0 never fires, p = 1 always fires.
inline bool bernoulli(RandomStream& rng, double p) {
    return uniform01(rng) < p;
}

}  // namespace noisypg
