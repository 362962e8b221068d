#pragma once

#include <cstdint>
#include <vector>

namespace glioplan {

// Deterministic PRNG used everywhere in place of <random>: the standard
// distributions are implementation-defined, which would break the
// byte-identical reproducibility contract across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Integer in [0, n), n > 0.
    std::uint64_t next_below(std::uint64_t n);
    // Standard normal via Box-Muller (no cached spare: keeps the stream
    // position a pure function of call count).
    double normal();
    double normal(double mean, double stddev);

    // Child stream for an independent purpose; mixing keeps streams
    // decorrelated while remaining a pure function of (seed, tag).
    Rng fork(std::uint64_t tag) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// splitmix64 single step; also used to derive per-case seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

} // namespace glioplan
