#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pimol {

/// Seeded random stream. All stochastic choices in the library go through
/// one of these so that a run is fully determined by its configured seeds.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_base_(seed), engine_(mix(seed)) {}

    /// Stream for (seed, salt); distinct salts give decorrelated streams.
    Rng(uint64_t seed, uint64_t salt) : Rng(seed + 0x9e3779b97f4a7c15ull * (salt + 1)) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    /// Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        std::uniform_int_distribution<int64_t> d(lo, hi);
        return d(engine_);
    }

    double normal() {
        std::normal_distribution<double> d(0.0, 1.0);
        return d(engine_);
    }

    /// Normal(0, sigma) with samples beyond two sigma redrawn.
    double truncated_normal(double sigma) {
        for (;;) {
            double z = normal();
            if (z > -2.0 && z < 2.0) return z * sigma;
        }
    }

    Rng child(uint64_t salt) const { return Rng(seed_base_, salt); }

    std::mt19937_64& engine() { return engine_; }

  private:
    // splitmix64 finalizer; decorrelates nearby seeds.
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t seed_base_ = 0;
    std::mt19937_64 engine_;
};

/// Stable 64-bit hash for deriving substream salts from names.
inline uint64_t hash_tag(std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace pimol
