#pragma once

// Counter-based deterministic RNG. Every stochastic operation in the library
// takes one of these explicitly; a (seed, stream) pair fully determines the
// sequence, so parallel and serial execution agree bitwise and runs are
// reproducible across platforms.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "patchwave/common.hpp"

namespace patchwave {

namespace detail {
// splitmix64 finalizer; a strong 64-bit mixer.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace detail

class CounterRng {
public:
    explicit CounterRng(uint64_t seed, uint64_t stream = 0)
        : key_(detail::mix64(detail::mix64(seed) ^ (stream * 0xda942042e4dd58b5ull))) {}

    // Derive an independent substream; does not disturb this generator.
    CounterRng fork(uint64_t stream_a, uint64_t stream_b = 0) const {
        CounterRng r(0);
        r.key_ = detail::mix64(key_ ^ detail::mix64(stream_a + 0x330e3193d90b1d4dull) ^
                               detail::mix64(stream_b * 0x9e3779b97f4a7c15ull + 0x1ull));
        r.counter_ = 0;
        return r;
    }

    CounterRng fork(std::string_view name, uint64_t stream = 0) const {
        return fork(fnv1a64(name), stream);
    }

    uint64_t next_u64() { return detail::mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0, 1) with 53-bit resolution. Drawn in double even when the
    // consumer is float so the stream is identical across scalar types.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Integer in [0, n), unbiased via rejection.
    uint64_t next_below(uint64_t n) {
        if (n == 0) throw config_error("next_below: n must be positive");
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t v = next_u64();
            if (v >= threshold) return v % n;
        }
    }

    // Standard normal, Box-Muller with a cached spare.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        // u1 == 0 would blow up the log
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace patchwave
