#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace fmow {

/// SplitMix64 (Steele, Lea & Flood 2014). 64-bit state, one add and a
/// three-step mixer per draw. Used for every random decision in the library so
/// datasets, dropout masks and shuffles regenerate identically on any platform.
class SplitMix64 {
public:
    static constexpr const char* kAlgorithm = "splitmix64";

    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    constexpr std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % n;
    }

    /// Uniform integer in [lo, hi] inclusive.
    constexpr std::int64_t between(std::int64_t lo, std::int64_t hi) noexcept {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    constexpr bool bernoulli(double p) noexcept { return uniform() < p; }

    constexpr std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// Derive an independent stream seed from a base seed and a tuple of counters.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
    SplitMix64 g(seed ^ 0x5851f42d4c957f2dULL);
    std::uint64_t h = g.next();
    SplitMix64 ga(h ^ (a * 0xd1342543de82ef95ULL));
    h = ga.next();
    SplitMix64 gb(h ^ (b * 0xa0761d6478bd642fULL));
    return gb.next();
}

/// Fisher-Yates shuffle driven by SplitMix64 (std::shuffle is implementation-defined).
template <typename T>
void shuffle(std::span<T> items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

}  // namespace fmow
