#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace attnguide {

// Deterministic random stream. All stochastic behavior in the project flows
// through this class so that runs are reproducible from seeds alone and so
// that "how many draws did this consume" is a checkable quantity.
//
// Distributions are implemented by hand instead of via <random> distribution
// objects, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() {
        ++draws_;
        return gen_();
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. Two draws per sample, no caching, so the
    // stream position is a pure function of the number of samples requested.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Number of raw generator draws consumed so far (the stream position).
    uint64_t draw_count() const { return draws_; }

    // Derives an independent stream id from a master seed and an index
    // (splitmix64 finalizer over the combined words).
    static uint64_t derive_stream(uint64_t master_seed, uint64_t index) {
        uint64_t z = master_seed + 0x9E3779B97F4A7C15ull * (index + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
    uint64_t draws_ = 0;
};

}  // namespace attnguide
