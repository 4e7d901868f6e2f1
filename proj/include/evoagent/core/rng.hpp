#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace evoagent {

// splitmix64; used for seeding and seed derivation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t x = (state += 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic, platform-stable generator (xoshiro256**). The standard
// library distributions are implementation-defined, so sampling is done
// by hand to keep trajectories bit-reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
        have_cached_normal_ = false;
        cached_normal_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 bits of mantissa.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n >= 1. Modulo bias is irrelevant at the
    // ranges used here (actions, tiles, window indices).
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // Standard normal via Box-Muller, second draw cached.
    double normal() {
        if (have_cached_normal_) {
            have_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        cached_normal_ = mag * std::sin(ang);
        have_cached_normal_ = true;
        return mag * std::cos(ang);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Raw state access for hashing and snapshots.
    const uint64_t* words() const { return state_; }
    void set_words(const uint64_t w[4]) {
        for (int i = 0; i < 4; ++i) state_[i] = w[i];
        have_cached_normal_ = false;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
    bool have_cached_normal_;
    double cached_normal_;
};

// Derives an independent stream seed from (base, tag, indices). Used to give
// every consumer (env resets, shooting, batch sampling, ...) its own stream
// off one root seed.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    uint64_t sm = base ^ h;
    splitmix64(sm);
    sm ^= 0x9e3779b97f4a7c15ULL * (a + 1);
    splitmix64(sm);
    sm ^= 0xc2b2ae3d27d4eb4fULL * (b + 1);
    return splitmix64(sm);
}

}  // namespace evoagent
