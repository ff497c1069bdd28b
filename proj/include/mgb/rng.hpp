#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mgb {

// Stateless seed derivation so that independent random streams can be spawned
// from (root seed, purpose, index...) tuples. Parallel workers that derive
// their stream from the same tuple produce identical sequences, which keeps
// results independent of the worker count.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, std::string_view purpose) {
    uint64_t h = root;
    for (char c : purpose) h = mix_seed(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
    return h;
}

inline uint64_t derive_seed(uint64_t root, std::string_view purpose, uint64_t a) {
    return mix_seed(derive_seed(root, purpose) ^ mix_seed(a));
}

inline uint64_t derive_seed(uint64_t root, std::string_view purpose, uint64_t a, uint64_t b) {
    return mix_seed(derive_seed(root, purpose, a) ^ mix_seed(mix_seed(b) + 0x517cc1b727220a95ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

// Uniform integer in [0, n). Avoids distribution objects whose behaviour may
// differ across standard libraries; this keeps streams byte-reproducible.
inline uint64_t rand_index(Rng& rng, uint64_t n) {
    const uint64_t limit = n * ((~uint64_t{0}) / n);
    uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

inline double rand_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rand_uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * rand_unit(rng);
}

inline double rand_normal(Rng& rng) {
    // Marsaglia polar method; stdlib normal_distribution is not portable
    // across implementations.
    while (true) {
        double u = 2.0 * rand_unit(rng) - 1.0;
        double v = 2.0 * rand_unit(rng) - 1.0;
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

}  // namespace mgb
