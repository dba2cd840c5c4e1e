#pragma once

#include <cstdint>
#include <vector>

namespace switchkd {

// splitmix64 finalizer; used for seeding and stream derivation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic (seed, stream) mixing for independent substreams.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    uint64_t s = seed + 0x632be59bd9b4e019ULL * (stream + 1);
    return splitmix64(s);
}

// xoshiro256** with explicit, platform-independent derived helpers.
// std::*_distribution is implementation-defined, so all sampling goes
// through the methods below to keep outputs byte-stable everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    // Independent stream for (seed, stream_id) pairs.
    static Rng stream(uint64_t seed, uint64_t stream_id) {
        uint64_t sm = seed;
        uint64_t a = splitmix64(sm);
        sm = stream_id ^ 0xd1b54a32d192ed03ULL;
        uint64_t b = splitmix64(sm);
        return Rng(a ^ (b + 0x9e3779b97f4a7c15ULL));
    }

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

    // [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // [0, n) via multiply-shift; n must be > 0.
    uint64_t bounded(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    int bounded_int(int n) { return static_cast<int>(bounded(static_cast<uint64_t>(n))); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = bounded(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

} // namespace switchkd
