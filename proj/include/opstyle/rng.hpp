#pragma once

// Deterministic random source. The generator is xoshiro256** seeded through
// splitmix64; normal variates come from the Box-Muller transform (pairs are
// drawn eagerly, the second value is cached). Both algorithms are fixed so a
// seed reproduces the exact same stream on every run of this implementation.
// Child streams for parallel work are derived with hash64(parent, index).

#include <cmath>
#include <cstdint>

#include "opstyle/tensor.hpp"

namespace opstyle {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Seed-splitting contract: child_seed = hash64(parent_seed, task_index).
inline uint64_t hash64(uint64_t parent, uint64_t index) {
    return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

class SeededRng {
public:
    explicit SeededRng(uint64_t seed = 0) : seed_(seed) {
        uint64_t x = seed;
        for (auto& si : s_) {
            x = splitmix64(x);
            si = x;
        }
        // all-zero state is invalid for xoshiro
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * next_unit(); }

    uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

    // standard normal via Box-Muller
    float normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        // u1 must be strictly positive for the log
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        cached_ = float(r * std::sin(a));
        has_cached_ = true;
        return float(r * std::cos(a));
    }

    Tensor normal_tensor(std::vector<int64_t> shape) {
        Tensor t(std::move(shape));
        for (int64_t i = 0, n = t.size(); i < n; ++i) t[i] = normal();
        return t;
    }

    SeededRng child(uint64_t index) const { return SeededRng(hash64(seed_, index)); }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t seed_ = 0;
    uint64_t s_[4] = {};
    float cached_ = 0.0f;
    bool has_cached_ = false;
};

} // namespace opstyle
