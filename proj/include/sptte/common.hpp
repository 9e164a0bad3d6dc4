#ifndef SPTTE_COMMON_HPP
#define SPTTE_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sptte {

// Error taxonomy; the CLI maps these to distinct exit codes.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct schema_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct dimension_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Single RNG type used everywhere so that seeded runs are reproducible.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Derive a child seed from a parent seed and a stream id (splitmix64 step).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a 64-bit, used for input digests and run manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

} // namespace sptte

#endif
