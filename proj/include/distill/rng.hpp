#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace distill {

// splitmix64: tiny, well-mixed 64-bit generator. Used everywhere a seeded
// stream is needed (weight init, synthetic prompts) so results are identical
// across platforms and standard libraries — std::mt19937 + distributions are
// not portable bit-for-bit.
struct SplitMix64 {
    std::uint64_t state{0};

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). Rejection-free modulo is fine here: n is tiny
    // compared to 2^64, so the bias is far below float resolution.
    std::uint64_t next_below(std::uint64_t n) { return next() % n; }

    // Uniform in [-1, 1) from the top 24 bits (exact in a 32-bit float).
    float next_signed_unit() {
        const std::uint64_t bits = next() >> 40; // 24 bits
        return static_cast<float>(bits) * (2.0f / 16777216.0f) - 1.0f;
    }
};

// FNV-1a over bytes; used to derive per-tensor seeds from names and to
// fingerprint logits vectors in run results.
inline std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(std::as_bytes(std::span<const char>(s.data(), s.size())));
}

inline std::uint64_t fnv1a64(std::span<const float> values) {
    return fnv1a64(std::as_bytes(values));
}

} // namespace distill
