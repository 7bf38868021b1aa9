#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace flowpolicy {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// SplitMix64 stream. Independent streams are derived by hashing a key path
// into the state, so adding a draw to one purpose never shifts another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix64(seed ^ 0xA02B0C837CE22AC1ull)) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) { return next() % n; }

    // Box-Muller; consumes two uniforms per draw, no cached state.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::vector<double> normal_vec(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = normal();
        return v;
    }

private:
    std::uint64_t state_;
};

// Derive a stream from (seed, key path). Used for counter-based parallelism:
// stream(seed, i) for sample i equals the sequential draw order.
template <class... Parts>
Rng substream(std::uint64_t seed, Parts... parts) {
    std::uint64_t s = mix64(seed ^ 0xD6E8FEB86659FD93ull);
    ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(parts)))), ...);
    return Rng(s);
}

// Named purposes keep unrelated draws on disjoint streams.
enum class RngUse : std::uint64_t {
    Noise = 1,
    Condition = 2,
    TauPrime = 3,
    DataIndex = 4,
    DiffusionEps = 5,
    Intermediate = 6,
    Dropout = 7,
    MixPlan = 8,
    Init = 9,
    Projection = 10,
    Dataset = 11,
    Toyfit = 12,
};

template <class... Parts>
Rng substream(std::uint64_t seed, RngUse use, Parts... parts) {
    return substream(seed, static_cast<std::uint64_t>(use), parts...);
}

}  // namespace flowpolicy
