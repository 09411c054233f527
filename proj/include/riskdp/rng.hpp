#pragma once

#include <cstdint>

namespace riskdp {

// Counter-based random streams. A stream is identified by a 64-bit key derived
// from (seed, ids...); the i-th variate of a stream is a pure function of
// (key, i). This makes every draw reproducible and order-independent, so
// empirical kernels built in parallel are byte-identical to serial ones.

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    template <typename... Ids>
    static CounterRng derive(std::uint64_t seed, Ids... ids) {
        std::uint64_t k = mix64(seed);
        ((k = mix64(k ^ mix64(static_cast<std::uint64_t>(ids)))), ...);
        return CounterRng(k);
    }

    std::uint64_t bits(std::uint64_t counter) const { return mix64(key_ ^ mix64(counter)); }

    /// Uniform variate in [0, 1).
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

}  // namespace riskdp
