#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "foresee/error.hpp"

namespace fse {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
} // namespace detail

/// Deterministic xoshiro256++ stream. All randomness in the library flows
/// through this type so that results are reproducible bit-for-bit from a
/// single integer seed, independent of platform library internals.
///
/// Independent substreams are obtained with fork(): forks of the same
/// parent with distinct ids never share state with the parent or each
/// other.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = detail::splitmix64(sm);
    }

    /// Child stream derived from this stream's seed and a stream id.
    /// Does not consume or depend on draws made from the parent.
    Rng fork(std::uint64_t stream_id) const {
        std::uint64_t sm = seed_ ^ 0xa0761d6478bd642fULL;
        std::uint64_t mixed = detail::splitmix64(sm) ^ stream_id;
        return Rng(detail::splitmix64(mixed));
    }

    std::uint64_t next_u64() {
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
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw ContractError("uniform_index: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return r % n;
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call; no
    /// cached spare, so the draw count per call is fixed.
    double normal() {
        const double u1 = 1.0 - uniform01(); // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// 1 with probability p, else 0.
    int bernoulli(double p) { return uniform01() < p ? 1 : 0; }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::uint64_t s_[4];
};

} // namespace fse
