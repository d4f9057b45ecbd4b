#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace rra {

/// 64-bit FNV-1a. Used to fold string ids into seeds.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t mix_bits(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Order-sensitive seed combiner: derive_seed(a, b) != derive_seed(b, a).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return mix_bits(base + 0x9e3779b97f4a7c15ULL * (salt + 1));
}

template <class... Rest>
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt, Rest... rest) {
    return derive_seed(derive_seed(base, salt), rest...);
}

/// Deterministic PRNG (splitmix64 core). All sampling in this project goes
/// through this type so that runs are reproducible across platforms; the
/// standard <random> distributions are implementation-defined and are not
/// used.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double real01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

    /// Uniform integer in [0, n). n must be positive; modulo bias is
    /// negligible for the small ranges used here.
    std::int64_t index(std::int64_t n) {
        return static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(n));
    }

    bool coin() { return (next() & 1u) != 0; }

    /// Standard normal via Box-Muller, one value cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = real01();
        double u2 = real01();
        // avoid log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

  private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace rra
