#pragma once

// Counter-keyed SplitMix64 streams.
//
// Every random quantity in the library is drawn from a stream identified by
// (seed, key...), so a draw does not depend on how many other draws happened
// before it or on which thread produced it. The algorithm is fixed:
//
//   state_0 = mix(seed ^ mix(k0 ^ mix(k1 ^ mix(k2 ^ mix(k3)))))
//   state_n = state_{n-1} + 0x9E3779B97F4A7C15
//   out_n   = mix(state_n)
//
// where mix is the SplitMix64 finalizer. Uniforms take the top 53 bits;
// normals use the Box-Muller transform (both branches discarded but the
// first, so one normal consumes exactly two uniforms).

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <iterator>
#include <numbers>

namespace scm {

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class KeyedRng {
public:
    KeyedRng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
        std::uint64_t h = 0x6A09E667F3BCC909ULL;
        // Fold keys right-to-left so that {a} and {a, 0} stay distinct.
        for (auto it = std::rbegin(keys); it != std::rend(keys); ++it) h = splitmix64_mix(*it ^ h);
        h = splitmix64_mix(h + keys.size());
        state_ = splitmix64_mix(seed ^ h);
    }

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        return splitmix64_mix(state_);
    }

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1].
    double uniform_open_low() noexcept { return 1.0 - uniform(); }

    double normal() noexcept {
        const double u1 = uniform_open_low();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    /// Standard exponential, used for flat Dirichlet draws.
    double exponential() noexcept { return -std::log(uniform_open_low()); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's nearly-divisionless rejection keeps the result unbiased.
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    std::uint64_t state_{};
};

}  // namespace scm
