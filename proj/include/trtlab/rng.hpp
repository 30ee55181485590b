#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace trtlab {

// splitmix64 generator. Hand-rolled instead of <random> engines+distributions
// because every artifact (datasets, checkpoints, reports) must replay
// byte-identically, so the bit stream cannot depend on the standard library's
// distribution algorithms.
struct Rng {
    uint64_t state = 0;

    explicit Rng(uint64_t seed = 0) : state(seed) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Derives an independent stream from a seed and a path of ids, e.g.
    // Rng::derive(seed, {scene_index, 2}). Order-sensitive.
    static Rng derive(uint64_t seed, std::initializer_list<uint64_t> path) {
        uint64_t s = mix(seed);
        for (uint64_t p : path) s = mix(s ^ mix(p));
        return Rng(s);
    }

    uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 random bits.
    double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Inclusive bounds, rejection sampled so the draw is exactly uniform.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t n = uint64_t(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + int64_t(v % n);
    }

    // Box-Muller, cosine branch only so one call consumes exactly two draws.
    double gaussian() {
        double u = 1.0 - next_unit();
        double v = next_unit();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
    }
    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    template <typename T>
    void shuffle(std::vector<T> & xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = size_t(uniform_int(0, int64_t(i) - 1));
            std::swap(xs[i - 1], xs[j]);
        }
    }
};

// FNV-1a over raw bytes; used for prefix hashes and config fingerprints.
inline uint64_t fnv1a(const void * data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char * p = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace trtlab
