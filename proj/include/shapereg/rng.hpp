// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>
#include <random>
#include <string_view>

namespace shapereg {

/// Named random sub-streams. Every stream is derived from the run seed alone,
/// so perturbing one component never shifts the draws of another.
enum class Stream : std::uint64_t {
    Data = 0x64617461,
    Init = 0x696e6974,
    Offsets = 0x6f666673,
    Augment = 0x61756720,
    Shuffle = 0x73687566,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for (run seed, stream, a, b, c); a..c are typically stage, epoch and step.
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x1234567ULL));
    h = splitmix64(h ^ (c + 0x89abcdefULL));
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    return Rng(derive_seed(seed, stream, a, b, c));
}

/// Box-Muller normal draw. Used instead of std::normal_distribution so the
/// sequence does not depend on the standard library implementation.
inline double standard_normal(Rng& rng) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    // 53-bit uniforms in (0,1]
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double uniform(Rng& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n))) % n;
}

/// Fisher-Yates shuffle with a library-independent index draw.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[uniform_index(rng, i)]);
    }
}

}  // namespace shapereg
