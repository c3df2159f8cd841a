#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace krec {

// Deterministic RNG used everywhere instead of std::uniform_*_distribution,
// whose output is implementation-defined. Same seed -> same stream on any
// platform, which is what the reproducibility guarantees rest on.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // run the mixer a few times so small seeds diverge immediately
        next_u64();
        next_u64();
    }

    // splitmix64 step
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, n), unbiased via rejection
    std::uint64_t next_below(std::uint64_t n) {
        // n == 0 would loop forever; callers guarantee n >= 1
        std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int next_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_double(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    bool next_bool(double p_true) { return next_double() < p_true; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = next_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[next_below(v.size())];
    }

private:
    std::uint64_t state_;
};

// Stable sub-stream derivation: mixing a tag keeps independent purposes
// (negative sampling, pair sampling, init) from sharing one stream, so adding
// a consumer never shifts another consumer's draws.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}
