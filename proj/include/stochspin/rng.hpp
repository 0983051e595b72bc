// rng.hpp — per-trajectory random streams with counter-derived seeds
//
// Every trajectory draws from its own stream, keyed by (master seed, trajectory
// index) only. Worker scheduling therefore never reorders randomness and runs
// are reproducible for any worker count.

#pragma once

#include <cmath>
#include <cstdint>

namespace stochspin {

// splitmix64: tiny, well-mixed 64-bit generator (Steele et al.).
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_index) noexcept {
        std::uint64_t s = master_seed;
        (void)splitmix64(s);
        state_ = s ^ (0x6a09e667f3bcc909ULL * (stream_index + 1));
        (void)splitmix64(state_);  // decorrelate nearby indices
    }

    std::uint64_t next_u64() noexcept { return splitmix64(state_); }

    // Uniform in (0, 1]; never returns 0 so log() below is safe.
    double next_uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. The pair cache keeps cost down and the
    // stream fully deterministic (no rejection step).
    double next_normal() noexcept {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace stochspin
