#pragma once

#include <cstdint>
#include <cmath>

// Seedable, cross-platform PRNG with explicit stream splitting.
//
// Every random object in the library (point, query, tree node, grid shift)
// draws from its own substream derived as substream(parent, tag, index).
// The engine is xoshiro256++ seeded through SplitMix64; normal variates use
// the Marsaglia polar method. No <random> distributions are used anywhere,
// so identical seeds give bit-identical output on every platform with IEEE
// doubles. Cross-language reproducibility is statistical, not bitwise.

namespace capann::rng {

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive the id of a child stream from a parent stream, a role tag and an index.
inline constexpr std::uint64_t substream(std::uint64_t parent, std::uint64_t tag,
                                         std::uint64_t index) noexcept {
    return mix64(mix64(parent ^ tag) + index);
}

// Role tags (arbitrary distinct constants).
inline constexpr std::uint64_t kTagPoint = 0x706f696e74ULL;
inline constexpr std::uint64_t kTagQuery = 0x7175657279ULL;
inline constexpr std::uint64_t kTagQueryPick = 0x7069636bULL;
inline constexpr std::uint64_t kTagTree = 0x74726565ULL;
inline constexpr std::uint64_t kTagChild = 0x6368696c64ULL;
inline constexpr std::uint64_t kTagGrid = 0x67726964ULL;
inline constexpr std::uint64_t kTagCell = 0x63656c6cULL;
inline constexpr std::uint64_t kTagMc = 0x6d63ULL;

class Engine {
public:
    explicit Engine(std::uint64_t seed) noexcept {
        std::uint64_t z = seed;
        for (auto& w : s_) {
            z = mix64(z + 0x9e3779b97f4a7c15ULL);
            w = z;
        }
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double next_unit() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in (0, 1]; safe as a log() argument.
    double next_unit_pos() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Unbiased integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) noexcept {
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    /// Standard normal, Marsaglia polar method.
    double next_normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_unit() - 1.0;
            v = 2.0 * next_unit() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace capann::rng
