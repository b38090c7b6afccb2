#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace spd {

// Counter-based splitmix64 stream. Every draw advances the counter by one,
// so replaying a generation only needs the seed and the documented draw
// order. Avoids std::*_distribution, whose output is implementation-defined.
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1) with 53 random mantissa bits
    double uniform() {
        return (next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Box-Muller, no caching: two uniform draws per normal keeps the
    // counter advance per call fixed.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) {
            u1 = 1e-300;
        }
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // uniform integer in [0, n)
    int uniform_int(int n) {
        return (int) (uniform() * (double) n) % n;
    }

    int64_t uniform_int64(int64_t n) {
        int64_t v = (int64_t) (uniform() * (double) n);
        return v >= n ? n - 1 : v;
    }

    // derive an independent stream for a tagged subcomponent
    Rng fork(uint64_t tag) const {
        Rng r(state ^ (0x853c49e6748fea9bull + tag * 0xda3e39cb94b95bdbull));
        r.next_u64();
        return r;
    }

    // random categorical draw from an (assumed normalized) distribution
    int categorical(const std::vector<double> & probs) {
        double u = uniform();
        double acc = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) {
                return (int) i;
            }
        }
        return (int) probs.size() - 1;
    }
};

} // namespace spd
