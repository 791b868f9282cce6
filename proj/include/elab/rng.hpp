#pragma once

#include "elab/common.hpp"

#include <cmath>

namespace elab {

// Deterministic splitmix64 stream with counter-based splitting. Every
// procedure takes an explicit Rng; fork(tag) derives an independent child
// stream without advancing the parent, so per-iteration streams can be
// reconstructed when replaying checkpoints.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), state_(mix(seed)) {}

    Rng fork(uint64_t tag) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(tag ^ 0xbf58476d1ce4e5b9ull));
        child.state_ = mix(child.key_ + 0x94d049bb133111ebull);
        child.cached_valid_ = false;
        return child;
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_ ^ key_);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Box-Muller; second value cached
    double normal() {
        if (cached_valid_) {
            cached_valid_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        cached_valid_ = true;
        return r * std::cos(a);
    }

    // uniform integer in [0, n)
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        return int(next_u64() % uint64_t(n));
    }

    Vec normal_vec(int d) {
        Vec v(d);
        for (int i = 0; i < d; ++i) v[i] = normal();
        return v;
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t state_;
    double cached_ = 0.0;
    bool cached_valid_ = false;
};

} // namespace elab
