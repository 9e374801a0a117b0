#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace amil {

// All randomness in the library flows from one root seed through this
// generator. Streams are derived, never shared: rng_for(seed, {tags...})
// returns an independent generator for a (purpose, epoch, item, ...) tuple,
// so replaying any part of a run never depends on consumption order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    bool bernoulli(double p) { return next_double() < p; }

    // Uniform integer in [0, n). n must be nonzero.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Stream purposes, kept in one place so derivations never collide.
namespace stream {
constexpr std::uint64_t kInit = 1;      // parameter initialization
constexpr std::uint64_t kShuffle = 2;   // per-epoch bag order
constexpr std::uint64_t kAugment = 3;   // per-epoch per-image transform draw
constexpr std::uint64_t kSplit = 4;     // train/val split
constexpr std::uint64_t kSynth = 5;     // synthetic dataset generation
}  // namespace stream

inline Rng rng_for(std::uint64_t root_seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = root_seed;
    for (std::uint64_t t : tags) s = mix_seed(s, t);
    return Rng(s);
}

}  // namespace amil
