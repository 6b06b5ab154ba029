#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

// Deterministic random numbers. We roll our own tiny generator instead of
// <random> because std:: distributions are implementation-defined: the same
// seed gives different streams on different standard libraries, which would
// break byte-identical reruns. splitmix64 + Box-Muller is fully pinned down.
//
// Streams are derived, never shared: every (purpose, round, agent) gets its
// own generator via derive_seed, so results cannot depend on thread count or
// on the order in which agents happen to be processed.

namespace fjdgd {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Hash a seed together with any number of stream tags. Feeding each tag
// through a full splitmix64 step avalanches it, so (seed, a, b) and
// (seed, b, a) land in unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = base;
    std::uint64_t h = splitmix64_next(s);
    for (std::uint64_t t : tags) {
        s = h ^ t;
        h = splitmix64_next(s);
    }
    return h;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    // Uniform on [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double next_normal(double mean, double stddev) {
        return mean + stddev * next_normal();
    }

    // Child generator for an independent substream.
    Rng derive(std::initializer_list<std::uint64_t> tags) const {
        return Rng(derive_seed(state_, tags));
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Deterministic Fisher-Yates shuffle of [0, n) index arrays and the like.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace fjdgd
