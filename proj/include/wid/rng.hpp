#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace wid {

// Deterministic RNG. std::uniform_*_distribution is implementation-defined,
// so every draw used anywhere in the pipeline goes through this generator to
// keep runs reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // avoid the all-zero fixed point and decorrelate small seeds
        next_u64();
        next_u64();
    }

    // splitmix64
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, n), unbiased via rejection
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    int next_int(int lo, int hi) { // inclusive range
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double next_double() { // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Box-Muller, one value per call (the spare is discarded so the draw
    // count stays independent of call parity)
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // derive an independent stream, e.g. per writer or per word
    Rng fork(std::uint64_t salt) const {
        return Rng(state_ ^ (0x632be59bd9b4e019ULL * (salt + 0x100000001b3ULL)));
    }

private:
    std::uint64_t state_;
};

} // namespace wid
